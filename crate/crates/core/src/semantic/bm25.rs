//! Okapi BM25 with Lucene-style non-negative IDF.

use std::collections::HashMap;

use super::SemanticError;

pub const K1: f64 = 1.5;
pub const B: f64 = 0.75;

/// Corpus statistics for one scoring universe, computed once and shared.
#[derive(Debug, Clone)]
pub struct Bm25Corpus {
    n_docs: usize,
    avgdl: f64,
    df: HashMap<String, usize>,
    k1: f64,
    b: f64,
}

impl Bm25Corpus {
    pub fn new<S: AsRef<str>>(docs: &[Vec<S>]) -> Result<Self, SemanticError> {
        Self::with_params(docs, K1, B)
    }

    pub fn with_params<S: AsRef<str>>(docs: &[Vec<S>], k1: f64, b: f64) -> Result<Self, SemanticError> {
        if docs.is_empty() {
            return Err(SemanticError::EmptyCorpus);
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut total_len = 0usize;
        for d in docs {
            total_len += d.len();
            let mut seen: Vec<&str> = d.iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        Ok(Self {
            n_docs: docs.len(),
            avgdl: total_len as f64 / docs.len() as f64,
            df,
            k1,
            b,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25(query, doc), summing over every query token occurrence.
    pub fn score<S: AsRef<str>>(&self, query: &[S], doc: &[S]) -> f64 {
        if query.is_empty() || doc.is_empty() {
            return 0.0;
        }
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for t in doc {
            *tf.entry(t.as_ref()).or_insert(0) += 1;
        }
        let norm = if self.avgdl > 0.0 {
            1.0 - self.b + self.b * doc.len() as f64 / self.avgdl
        } else {
            1.0
        };
        query
            .iter()
            .filter_map(|q| {
                let f = *tf.get(q.as_ref())? as f64;
                Some(self.idf(q.as_ref()) * f * (self.k1 + 1.0) / (f + self.k1 * norm))
            })
            .sum()
    }

    pub fn score_sym<S: AsRef<str>>(&self, a: &[S], b: &[S]) -> f64 {
        (self.score(a, b) + self.score(b, a)) / 2.0
    }
}

/// Min-max scaling to [0,1]. A constant column maps to 1.0; NaN stays NaN.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                f64::NAN
            } else if hi > lo {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect()
}
