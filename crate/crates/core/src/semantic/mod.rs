//! Text similarity between scanpath summaries.

mod bm25;
mod embed;
mod lexical;
mod tokenize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{minmax_normalize, Bm25Corpus};
pub use embed::{
    embed_score, embed_score_vectors, EmbedOptions, EmbedScore, EmbeddingBackend, IdfWeights,
    OrthogonalStub, RemoteEmbedding, TokenVectors,
};
pub use lexical::{bleu_4, bleu_4_sym, rouge_l};
pub use tokenize::{tokenize, TokenSequence};

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("BM25 corpus is empty")]
    EmptyCorpus,
    #[error("embedding score is undefined for an empty token sequence")]
    EmptySequence,
    #[error("embedding backend: {0}")]
    Backend(String),
    #[error("pair index {0} out of range")]
    BadPair(usize),
}

/// Pair scores. `embed_f1` is `None` when either summary has no tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticScoreSet {
    pub embed_f1: Option<f64>,
    pub rouge_l: f64,
    pub bleu_4: f64,
    pub bm25_sym: f64,
    pub bm25_norm: f64,
}

/// Scores `pairs` of indices into `summaries`, which also form the BM25
/// corpus. Each summary is embedded once.
pub fn score_condition(
    summaries: &[String],
    pairs: &[(usize, usize)],
    backend: &dyn EmbeddingBackend,
    opts: &EmbedOptions,
) -> Result<Vec<SemanticScoreSet>, SemanticError> {
    let tokens: Vec<TokenSequence> = summaries.iter().map(|s| tokenize(s)).collect();
    for &(i, j) in pairs {
        for k in [i, j] {
            if k >= tokens.len() {
                return Err(SemanticError::BadPair(k));
            }
        }
    }
    let corpus = Bm25Corpus::new(&tokens)?;
    let vectors: Vec<Option<TokenVectors>> = tokens
        .par_iter()
        .map(|t| {
            if t.is_empty() {
                Ok(None)
            } else {
                backend.embed(t).map(Some)
            }
        })
        .collect::<Result<_, _>>()?;

    let mut sets: Vec<SemanticScoreSet> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&tokens[i], &tokens[j]);
            let embed_f1 = match (&vectors[i], &vectors[j]) {
                (Some(va), Some(vb)) => Some(embed_score_vectors(a, va, b, vb, opts)?.f1),
                _ => None,
            };
            Ok(SemanticScoreSet {
                embed_f1,
                rouge_l: rouge_l(a, b),
                bleu_4: bleu_4_sym(a, b),
                bm25_sym: corpus.score_sym(a, b),
                bm25_norm: f64::NAN,
            })
        })
        .collect::<Result<_, SemanticError>>()?;

    let raw: Vec<f64> = sets.iter().map(|s| s.bm25_sym).collect();
    for (s, n) in sets.iter_mut().zip(minmax_normalize(&raw)) {
        s.bm25_norm = n;
    }
    Ok(sets)
}
