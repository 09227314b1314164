//! Score normalization, rank correlation between metric families, the
//! signed divergence between text and spatial similarity, and blur-token
//! diagnostics on fixation descriptions.

mod stats;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::dataset::ScanpathPair;
use crate::encoding::EncodingCondition;
use crate::semantic::{tokenize, SemanticScoreSet};
use crate::spatial::SpatialScoreSet;

pub use stats::{mid_ranks, pearson, spearman, spearman_pairwise};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticMetric {
    EmbedF1,
    RougeL,
    Bleu4,
    Bm25,
}

impl SemanticMetric {
    pub const ALL: [Self; 4] = [Self::EmbedF1, Self::RougeL, Self::Bleu4, Self::Bm25];

    pub fn name(self) -> &'static str {
        match self {
            Self::EmbedF1 => "embed_f1",
            Self::RougeL => "rouge_l",
            Self::Bleu4 => "bleu_4",
            Self::Bm25 => "bm25",
        }
    }

    /// Similarity in [0,1]; BM25 uses the normalized score.
    pub fn value(self, s: &SemanticScoreSet) -> Option<f64> {
        let v = match self {
            Self::EmbedF1 => s.embed_f1?,
            Self::RougeL => s.rouge_l,
            Self::Bleu4 => s.bleu_4,
            Self::Bm25 => s.bm25_norm,
        };
        (!v.is_nan()).then_some(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMetric {
    Dtw,
    Scanmatch,
    Multimatch,
    Hausdorff,
    Tde,
    Levenshtein,
}

impl SpatialMetric {
    pub const ALL: [Self; 6] = [
        Self::Dtw,
        Self::Scanmatch,
        Self::Multimatch,
        Self::Hausdorff,
        Self::Tde,
        Self::Levenshtein,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dtw => "dtw",
            Self::Scanmatch => "scanmatch",
            Self::Multimatch => "multimatch",
            Self::Hausdorff => "hausdorff",
            Self::Tde => "tde",
            Self::Levenshtein => "levenshtein",
        }
    }

    pub fn is_distance(self) -> bool {
        !matches!(self, Self::Scanmatch | Self::Multimatch)
    }

    /// Raw value; MultiMatch contributes the mean of its five dimensions.
    pub fn raw(self, s: &SpatialScoreSet) -> Option<f64> {
        match self {
            Self::Dtw => s.dtw,
            Self::Scanmatch => s.scanmatch,
            Self::Multimatch => s.multimatch.map(|m| m.mean),
            Self::Hausdorff => s.hausdorff,
            Self::Tde => s.tde,
            Self::Levenshtein => s.levenshtein.map(f64::from),
        }
    }
}

/// Spatial scores on a common similarity scale, one slot per
/// [`SpatialMetric::ALL`] entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSpatial(pub [Option<f64>; 6]);

impl NormalizedSpatial {
    pub fn get(&self, m: SpatialMetric) -> Option<f64> {
        self.0[m as usize]
    }

    pub fn set(&mut self, m: SpatialMetric, v: Option<f64>) {
        self.0[m as usize] = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScoreRecord {
    pub pair: ScanpathPair,
    pub condition: EncodingCondition,
    pub semantic: SemanticScoreSet,
    pub spatial: SpatialScoreSet,
    pub normalized_spatial: NormalizedSpatial,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    /// Pool every pair in the condition.
    #[default]
    Condition,
    /// Normalize within each image separately.
    Image,
}

impl std::str::FromStr for NormScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "condition" => Ok(Self::Condition),
            "image" => Ok(Self::Image),
            other => Err(format!("unknown normalization scope {other:?}")),
        }
    }
}

/// Fills `normalized_spatial`. Similarity metrics pass through; distances
/// become `1 - (d - min) / (max - min)` over the scope's non-missing values,
/// with constant groups mapping to 1.0. Returns warnings for constant or
/// all-missing columns.
pub fn normalize_spatial(records: &mut [PairScoreRecord], scope: NormScope) -> Vec<String> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = match scope {
            NormScope::Condition => "",
            NormScope::Image => r.pair.image_id.as_str(),
        };
        groups.entry(key).or_default().push(i);
    }
    let groups: Vec<(String, Vec<usize>)> =
        groups.into_iter().map(|(k, v)| (k.to_string(), v)).collect();

    let mut warnings = Vec::new();
    for m in SpatialMetric::ALL {
        if records.iter().all(|r| m.raw(&r.spatial).is_none()) {
            if !records.is_empty() {
                warnings.push(format!("{}: no values, metric dropped", m.name()));
            }
            for r in records.iter_mut() {
                r.normalized_spatial.set(m, None);
            }
            continue;
        }
        for (group, idx) in &groups {
            let vals: Vec<f64> = idx.iter().filter_map(|&i| m.raw(&records[i].spatial)).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m.is_distance() && !vals.is_empty() && hi <= lo {
                let at = if group.is_empty() { String::new() } else { format!(" in image {group}") };
                warnings.push(format!("{}: constant column{at}, mapped to 1.0", m.name()));
            }
            for &i in idx {
                let norm = m.raw(&records[i].spatial).map(|v| {
                    if !m.is_distance() {
                        v.clamp(0.0, 1.0)
                    } else if hi > lo {
                        (1.0 - (v - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    }
                });
                records[i].normalized_spatial.set(m, norm);
            }
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    warnings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub semantic: SemanticMetric,
    pub spatial: SpatialMetric,
    pub rho: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub condition: String,
    pub rows: Vec<SemanticMetric>,
    pub cols: Vec<SpatialMetric>,
    pub total_pairs: usize,
    /// Row-major, `rows.len() x cols.len()`.
    pub cells: Vec<Vec<CorrelationCell>>,
}

impl CorrelationMatrix {
    pub fn cell(&self, s: SemanticMetric, p: SpatialMetric) -> Option<&CorrelationCell> {
        let i = self.rows.iter().position(|&r| r == s)?;
        let j = self.cols.iter().position(|&c| c == p)?;
        Some(&self.cells[i][j])
    }
}

/// Spearman between every semantic metric and every normalized spatial
/// metric, with pairwise deletion of missing values.
pub fn correlation_matrix(condition: &str, records: &[PairScoreRecord]) -> CorrelationMatrix {
    let sem: Vec<Vec<Option<f64>>> = SemanticMetric::ALL
        .iter()
        .map(|m| records.iter().map(|r| m.value(&r.semantic)).collect())
        .collect();
    let spa: Vec<Vec<Option<f64>>> = SpatialMetric::ALL
        .iter()
        .map(|m| records.iter().map(|r| r.normalized_spatial.get(*m)).collect())
        .collect();
    let cells = SemanticMetric::ALL
        .iter()
        .zip(&sem)
        .map(|(&s, xs)| {
            SpatialMetric::ALL
                .iter()
                .zip(&spa)
                .map(|(&p, ys)| {
                    let (rho, n_pairs) =
                        spearman_pairwise(xs, ys).expect("columns share the record count");
                    CorrelationCell {
                        semantic: s,
                        spatial: p,
                        rho,
                        n_pairs,
                    }
                })
                .collect()
        })
        .collect();
    CorrelationMatrix {
        condition: condition.to_string(),
        rows: SemanticMetric::ALL.to_vec(),
        cols: SpatialMetric::ALL.to_vec(),
        total_pairs: records.len(),
        cells,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub pair: ScanpathPair,
    pub semantic: SemanticMetric,
    pub spatial: SpatialMetric,
    pub sim_text: f64,
    pub sim_spatial: f64,
    pub d: f64,
}

fn sort_divergence(v: &mut [DivergenceRecord]) {
    v.sort_by(|a, b| {
        b.d.abs()
            .total_cmp(&a.d.abs())
            .then(a.semantic.cmp(&b.semantic))
            .then(a.spatial.cmp(&b.spatial))
            .then_with(|| a.pair.cmp(&b.pair))
    });
}

/// `D = Sim_text - Sim_spatial` per pair, sorted by |D| descending. Pairs
/// missing either value are skipped.
pub fn divergence(
    records: &[PairScoreRecord],
    semantic: SemanticMetric,
    spatial: SpatialMetric,
) -> Vec<DivergenceRecord> {
    let mut out: Vec<DivergenceRecord> = records
        .iter()
        .filter_map(|r| {
            let t = semantic.value(&r.semantic)?;
            let s = r.normalized_spatial.get(spatial)?;
            Some(DivergenceRecord {
                pair: r.pair.clone(),
                semantic,
                spatial,
                sim_text: t,
                sim_spatial: s,
                d: (t - s).clamp(-1.0, 1.0),
            })
        })
        .collect();
    sort_divergence(&mut out);
    out
}

/// Every metric combination, globally sorted by |D|.
pub fn divergence_all(records: &[PairScoreRecord]) -> Vec<DivergenceRecord> {
    let mut out: Vec<DivergenceRecord> = SemanticMetric::ALL
        .iter()
        .flat_map(|&s| SpatialMetric::ALL.iter().map(move |&p| (s, p)))
        .flat_map(|(s, p)| divergence(records, s, p))
        .collect();
    sort_divergence(&mut out);
    out
}

pub const DEFAULT_BLUR_LEXICON: [&str; 10] = [
    "blur",
    "blurry",
    "blurred",
    "texture",
    "textured",
    "indistinct",
    "unclear",
    "background",
    "abstract",
    "pattern",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurDiagnostics {
    pub n_descriptions: usize,
    pub n_flagged: usize,
    /// Share of descriptions containing at least one lexicon token.
    pub rate: f64,
    /// Total occurrences of each lexicon token.
    pub token_counts: BTreeMap<String, usize>,
}

pub fn blur_diagnostics<S: AsRef<str>>(descriptions: &[S], lexicon: &[String]) -> BlurDiagnostics {
    let mut counts: HashMap<&str, usize> = lexicon.iter().map(|t| (t.as_str(), 0)).collect();
    let mut flagged = 0;
    for d in descriptions {
        let mut hit = false;
        for tok in tokenize(d.as_ref()) {
            if let Some(c) = counts.get_mut(tok.as_str()) {
                *c += 1;
                hit = true;
            }
        }
        flagged += usize::from(hit);
    }
    let n = descriptions.len();
    BlurDiagnostics {
        n_descriptions: n,
        n_flagged: flagged,
        rate: if n == 0 { 0.0 } else { flagged as f64 / n as f64 },
        token_counts: counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

pub fn default_blur_lexicon() -> Vec<String> {
    DEFAULT_BLUR_LEXICON.iter().map(|s| s.to_string()).collect()
}
