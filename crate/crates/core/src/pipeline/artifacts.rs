//! Plain-file stage outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::analysis::{DivergenceRecord, NormalizedSpatial, PairScoreRecord, SpatialMetric};
use crate::dataset::ScanpathPair;
use crate::encoding::EncodingCondition;
use crate::semantic::SemanticScoreSet;
use crate::spatial::{MultiMatchScores, SpatialScoreSet};

pub fn run_config_path(out: &Path) -> PathBuf {
    out.join("run_config.json")
}

pub fn descriptions_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("descriptions_{c}.json"))
}

pub fn summaries_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("summaries_{c}.json"))
}

pub fn pairs_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("pairs_{c}.csv"))
}

pub fn correlation_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("correlation_{c}.json"))
}

pub fn divergence_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("divergence_top_{c}.csv"))
}

pub fn diagnostics_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("diagnostics_{c}.json"))
}

pub fn heatmap_path(out: &Path, c: &EncodingCondition) -> PathBuf {
    out.join(format!("heatmap_{c}.svg"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionEntry {
    pub image_id: String,
    pub subject_id: String,
    pub fixation_index: usize,
    pub cache_key: String,
    /// `None` when the description could not be obtained.
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionManifest {
    pub condition: EncodingCondition,
    pub model_id: String,
    pub prompt_hash: String,
    pub entries: Vec<DescriptionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub image_id: String,
    pub subject_id: String,
    pub cache_key: Option<String>,
    pub text: Option<String>,
    pub source_description_hashes: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryManifest {
    pub condition: EncodingCondition,
    pub model_id: String,
    pub entries: Vec<SummaryEntry>,
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifacts serialize");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Artifact(format!("{}: {e}", path.display())))
}

const PAIR_COLUMNS: [&str; 26] = [
    "image_id",
    "subject_a",
    "subject_b",
    "condition",
    "embed_f1",
    "rouge_l",
    "bleu_4",
    "bm25_sym",
    "bm25_norm",
    "dtw",
    "scanmatch",
    "mm_shape",
    "mm_direction",
    "mm_length",
    "mm_position",
    "mm_duration",
    "mm_mean",
    "hausdorff",
    "tde",
    "levenshtein",
    "sim_dtw",
    "sim_scanmatch",
    "sim_multimatch",
    "sim_hausdorff",
    "sim_tde",
    "sim_levenshtein",
];

// Display for f64 is the shortest string that parses back to the same value.
fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

pub fn write_pairs_csv(path: &Path, records: &[PairScoreRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PipelineError::Artifact(format!("{}: {e}", path.display()));
    w.write_record(PAIR_COLUMNS).map_err(csv_err)?;
    for r in records {
        let s = &r.semantic;
        let p = &r.spatial;
        let mm = p.multimatch;
        let mut row = vec![
            r.pair.image_id.clone(),
            r.pair.subject_a.clone(),
            r.pair.subject_b.clone(),
            r.condition.name(),
            fmt_opt(s.embed_f1),
            fmt_f(s.rouge_l),
            fmt_f(s.bleu_4),
            fmt_f(s.bm25_sym),
            fmt_f(s.bm25_norm),
            fmt_opt(p.dtw),
            fmt_opt(p.scanmatch),
            fmt_opt(mm.map(|m| m.shape)),
            fmt_opt(mm.map(|m| m.direction)),
            fmt_opt(mm.map(|m| m.length)),
            fmt_opt(mm.map(|m| m.position)),
            fmt_opt(mm.map(|m| m.duration)),
            fmt_opt(mm.map(|m| m.mean)),
            fmt_opt(p.hausdorff),
            fmt_opt(p.tde),
            p.levenshtein.map(|v| v.to_string()).unwrap_or_default(),
        ];
        row.extend(SpatialMetric::ALL.iter().map(|&m| fmt_opt(r.normalized_spatial.get(m))));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Artifact(e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairScoreRecord>, PipelineError> {
    let bad = |msg: String| PipelineError::Artifact(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(PAIR_COLUMNS) {
        return Err(bad("unexpected header".into()));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let at = |msg: &str| bad(format!("row {}: {msg}", line + 1));
        let opt = |i: usize| -> Result<Option<f64>, PipelineError> {
            match &row[i] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| at(PAIR_COLUMNS[i])),
            }
        };
        let req = |i: usize| -> Result<f64, PipelineError> { Ok(opt(i)?.unwrap_or(f64::NAN)) };
        let pair = ScanpathPair::new(&row[0], &row[1], &row[2]).ok_or_else(|| at("self pair"))?;
        let condition = EncodingCondition::parse_any(&row[3]).map_err(|e| at(&e.to_string()))?;
        let mm = match (opt(11)?, opt(12)?, opt(13)?, opt(14)?, opt(15)?, opt(16)?) {
            (Some(shape), Some(direction), Some(length), Some(position), Some(duration), Some(mean)) => {
                Some(MultiMatchScores {
                    shape,
                    direction,
                    length,
                    position,
                    duration,
                    mean,
                })
            }
            _ => None,
        };
        let levenshtein = match &row[19] {
            "" => None,
            s => Some(s.parse().map_err(|_| at("levenshtein"))?),
        };
        let mut normalized = NormalizedSpatial::default();
        for (k, &m) in SpatialMetric::ALL.iter().enumerate() {
            normalized.set(m, opt(20 + k)?);
        }
        out.push(PairScoreRecord {
            pair,
            condition,
            semantic: SemanticScoreSet {
                embed_f1: opt(4)?,
                rouge_l: req(5)?,
                bleu_4: req(6)?,
                bm25_sym: req(7)?,
                bm25_norm: req(8)?,
            },
            spatial: SpatialScoreSet {
                dtw: opt(9)?,
                scanmatch: opt(10)?,
                multimatch: mm,
                hausdorff: opt(17)?,
                tde: opt(18)?,
                levenshtein,
            },
            normalized_spatial: normalized,
        });
    }
    Ok(out)
}

pub fn write_divergence_csv(path: &Path, rows: &[DivergenceRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PipelineError::Artifact(format!("{}: {e}", path.display()));
    w.write_record([
        "rank",
        "image_id",
        "subject_a",
        "subject_b",
        "semantic_metric",
        "spatial_metric",
        "sim_text",
        "sim_spatial",
        "d",
    ])
    .map_err(csv_err)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.pair.image_id.clone(),
            r.pair.subject_a.clone(),
            r.pair.subject_b.clone(),
            r.semantic.name().to_string(),
            r.spatial.name().to_string(),
            fmt_f(r.sim_text),
            fmt_f(r.sim_spatial),
            fmt_f(r.d),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Artifact(e.to_string()))?;
    write_bytes(path, &bytes)
}
