//! Token-embedding similarity with greedy cosine matching.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::debug;

use super::SemanticError;
use crate::cache::{hash_fields, sha256_hex, CacheStore};
use crate::vlm::backoff_delay;
use crate::vlm::transport::{http_agent, post_json, TransportError};

/// Per-token vectors for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenVectors {
    /// Unit-norm rows.
    Dense(Vec<Vec<f64>>),
    /// One-hot rows stored as the index of the single nonzero entry.
    OneHot(Vec<u64>),
}

impl TokenVectors {
    pub fn len(&self) -> usize {
        match self {
            Self::Dense(v) => v.len(),
            Self::OneHot(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> String;
    fn embed(&self, tokens: &[String]) -> Result<TokenVectors, SemanticError>;
}

/// Deterministic backend mapping each distinct token to its own axis.
/// Cosine is 1 for equal tokens and 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrthogonalStub;

impl OrthogonalStub {
    pub fn axis(token: &str) -> u64 {
        let digest = sha2_prefix(token);
        digest & ((1u64 << 48) - 1)
    }
}

fn sha2_prefix(token: &str) -> u64 {
    let hex = sha256_hex(token.as_bytes());
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}

impl EmbeddingBackend for OrthogonalStub {
    fn name(&self) -> String {
        "orthogonal-stub".into()
    }

    fn embed(&self, tokens: &[String]) -> Result<TokenVectors, SemanticError> {
        Ok(TokenVectors::OneHot(
            tokens.iter().map(|t| Self::axis(t)).collect(),
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedRecord {
    model: String,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service: `POST {url}/embed` with
/// `{model, tokens}` returning `{vectors}`. Responses are cached by
/// (model, token sequence). Without a URL it serves from the cache only.
pub struct RemoteEmbedding {
    url: Option<String>,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    cache: Option<CacheStore>,
    max_retries: u32,
    retry_base_s: f64,
}

impl RemoteEmbedding {
    pub fn new(url: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.map(|u| u.trim_end_matches('/').to_string()),
            model: model.into(),
            api_key: None,
            agent: http_agent(timeout),
            cache: None,
            max_retries: 3,
            retry_base_s: 1.0,
        }
    }

    pub fn with_cache(mut self, cache: CacheStore) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retries(mut self, max_retries: u32, base_s: f64) -> Self {
        self.max_retries = max_retries;
        self.retry_base_s = base_s;
        self
    }

    fn cache_key(&self, tokens: &[String]) -> String {
        let mut fields = vec!["sema-embed-v1", self.model.as_str()];
        fields.extend(tokens.iter().map(String::as_str));
        hash_fields(fields)
    }

    fn fetch(&self, url: &str, tokens: &[String]) -> Result<Vec<Vec<f64>>, SemanticError> {
        let body = json!({ "model": self.model, "tokens": tokens });
        let endpoint = format!("{url}/embed");
        let mut attempt = 0;
        loop {
            match post_json(&self.agent, &endpoint, self.api_key.as_deref(), &body) {
                Ok(text) => {
                    let resp: EmbedResponse = serde_json::from_str(&text).map_err(|e| {
                        SemanticError::Backend(TransportError::Protocol(e.to_string()).to_string())
                    })?;
                    return Ok(resp.vectors);
                }
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let delay = backoff_delay(attempt, self.retry_base_s, 30.0, &mut rand::rng());
                    debug!(attempt, ?delay, error = %e, "retrying embedding request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(SemanticError::Backend(e.to_string())),
            }
        }
    }
}

impl EmbeddingBackend for RemoteEmbedding {
    fn name(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed(&self, tokens: &[String]) -> Result<TokenVectors, SemanticError> {
        if tokens.is_empty() {
            return Ok(TokenVectors::Dense(Vec::new()));
        }
        let key = self.cache_key(tokens);
        if let Some(cache) = &self.cache {
            if let Some(rec) = cache
                .get::<EmbedRecord>(&key)
                .map_err(|e| SemanticError::Backend(e.to_string()))?
            {
                return normalize_rows(rec.vectors, tokens.len()).map(TokenVectors::Dense);
            }
        }
        let Some(url) = &self.url else {
            return Err(SemanticError::Backend(format!(
                "embedding for {} tokens not cached (key {key}) and no endpoint configured",
                tokens.len()
            )));
        };
        let vectors = self.fetch(url, tokens)?;
        let rows = normalize_rows(vectors.clone(), tokens.len())?;
        if let Some(cache) = &self.cache {
            cache
                .put(
                    &key,
                    &EmbedRecord {
                        model: self.model.clone(),
                        tokens: tokens.to_vec(),
                        vectors,
                    },
                )
                .map_err(|e| SemanticError::Backend(e.to_string()))?;
        }
        Ok(TokenVectors::Dense(rows))
    }
}

fn normalize_rows(rows: Vec<Vec<f64>>, expected: usize) -> Result<Vec<Vec<f64>>, SemanticError> {
    if rows.len() != expected {
        return Err(SemanticError::Backend(format!(
            "backend returned {} vectors for {expected} tokens",
            rows.len()
        )));
    }
    let dim = rows.first().map_or(0, Vec::len);
    rows.into_iter()
        .map(|r| {
            if r.len() != dim || dim == 0 {
                return Err(SemanticError::Backend("vectors have inconsistent dimension".into()));
            }
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(SemanticError::Backend("zero or non-finite vector".into()));
            }
            Ok(r.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Optional weighting and rescaling. Both are off by default.
#[derive(Debug, Clone, Default)]
pub struct EmbedOptions {
    /// Token weights `ln((N+1)/(df+1))` over a reference corpus.
    pub idf: Option<IdfWeights>,
    /// Baseline `b`; scores become `max(0, (s - b) / (1 - b))`.
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IdfWeights {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl IdfWeights {
    pub fn from_corpus(docs: &[Vec<String>]) -> Self {
        let mut df = HashMap::new();
        for d in docs {
            let mut seen: Vec<&String> = d.iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        Self {
            n_docs: docs.len(),
            df,
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn cosine_matrix(a: &TokenVectors, b: &TokenVectors) -> Result<Vec<Vec<f64>>, SemanticError> {
    match (a, b) {
        (TokenVectors::OneHot(x), TokenVectors::OneHot(y)) => Ok(x
            .iter()
            .map(|i| y.iter().map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()),
        (TokenVectors::Dense(x), TokenVectors::Dense(y)) => x
            .iter()
            .map(|u| {
                y.iter()
                    .map(|v| {
                        if u.len() != v.len() {
                            return Err(SemanticError::Backend("vector dimension mismatch".into()));
                        }
                        if u == v {
                            return Ok(1.0);
                        }
                        let dot: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
                        Ok(dot.clamp(-1.0, 1.0))
                    })
                    .collect()
            })
            .collect(),
        _ => Err(SemanticError::Backend("mixed vector representations".into())),
    }
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn rescale(s: f64, baseline: Option<f64>) -> f64 {
    match baseline {
        Some(b) if b < 1.0 => ((s - b) / (1.0 - b)).max(0.0),
        _ => s,
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        (2.0 * p * r / (p + r)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Greedy matching over precomputed vectors. Recall averages over `a`
/// tokens, precision over `b` tokens.
pub fn embed_score_vectors(
    a_tokens: &[String],
    a: &TokenVectors,
    b_tokens: &[String],
    b: &TokenVectors,
    opts: &EmbedOptions,
) -> Result<EmbedScore, SemanticError> {
    if a.is_empty() || b.is_empty() {
        return Err(SemanticError::EmptySequence);
    }
    if a.len() != a_tokens.len() || b.len() != b_tokens.len() {
        return Err(SemanticError::Backend("vector count differs from token count".into()));
    }
    let sim = cosine_matrix(a, b)?;
    let row_max: Vec<f64> = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let col_max: Vec<f64> = (0..b.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let weights = |toks: &[String]| -> Vec<f64> {
        match &opts.idf {
            Some(idf) => toks.iter().map(|t| idf.weight(t)).collect(),
            None => vec![1.0; toks.len()],
        }
    };
    let recall = weighted_mean(&row_max, &weights(a_tokens));
    let precision = weighted_mean(&col_max, &weights(b_tokens));
    let f = f1(precision, recall);
    Ok(EmbedScore {
        precision: rescale(precision, opts.baseline).clamp(0.0, 1.0),
        recall: rescale(recall, opts.baseline).clamp(0.0, 1.0),
        f1: rescale(f, opts.baseline).clamp(0.0, 1.0),
    })
}

pub fn embed_score(
    a: &[String],
    b: &[String],
    backend: &dyn EmbeddingBackend,
    opts: &EmbedOptions,
) -> Result<EmbedScore, SemanticError> {
    if a.is_empty() || b.is_empty() {
        return Err(SemanticError::EmptySequence);
    }
    let va = backend.embed(a)?;
    let vb = backend.embed(b)?;
    embed_score_vectors(a, &va, b, &vb, opts)
}
