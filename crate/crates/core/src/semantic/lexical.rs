//! ROUGE-L and BLEU-4 over token sequences.

use std::collections::HashMap;

pub(crate) fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F1. With P = L/|b| and R = L/|a| the harmonic mean reduces to
/// 2L/(|a|+|b|), which is symmetric in floating point.
pub fn rouge_l<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let a: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
    let l = lcs_len(&a, &b);
    if l == 0 {
        return 0.0;
    }
    2.0 * l as f64 / (a.len() + b.len()) as f64
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Directional BLEU-4 with add-one smoothing for n >= 2.
pub fn bleu_4<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refs: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c = ngram_counts(&cand, n);
        let r = ngram_counts(&refs, n);
        let total: usize = c.values().sum();
        let matched: usize = c
            .iter()
            .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (cand.len() as f64, refs.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    (bp * (log_sum / 4.0).exp()).clamp(0.0, 1.0)
}

pub fn bleu_4_sym<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    (bleu_4(a, b) + bleu_4(b, a)) / 2.0
}
