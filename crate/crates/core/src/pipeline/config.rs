use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::analysis::NormScope;
use crate::encoding::EncodingCondition;
use crate::spatial::SpatialParams;
use crate::vlm::VlmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    /// Base URL of the embedding service; the orthogonal stub is used when unset.
    pub endpoint_url: Option<String>,
    pub model: String,
    pub idf: bool,
    pub baseline: Option<f64>,
    pub request_timeout_s: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            model: "bert-base-uncased".into(),
            idf: false,
            baseline: None,
            request_timeout_s: 60.0,
        }
    }
}

/// Everything needed to reproduce a run from the cache. Written to
/// `run_config.json` in the output directory by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub conditions: Vec<EncodingCondition>,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed: u64,
    pub offline: bool,
    pub vlm: VlmConfig,
    pub embedding: EmbeddingConfig,
    pub metrics: SpatialParams,
    pub norm_scope: NormScope,
    pub top_k: usize,
    /// One token per line; the built-in list is used when unset.
    pub blur_lexicon: Option<PathBuf>,
    pub dump_encodings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            conditions: EncodingCondition::standard(),
            out_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from(".sema-cache"),
            seed: 0,
            offline: false,
            vlm: VlmConfig::default(),
            embedding: EmbeddingConfig::default(),
            metrics: SpatialParams::default(),
            norm_scope: NormScope::Condition,
            top_k: 50,
            blur_lexicon: None,
            dump_encodings: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            PipelineError::Config(format!("{}: {} at {}", path.display(), e.inner(), e.path()))
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.conditions.is_empty() {
            return Err(PipelineError::Config("no conditions selected".into()));
        }
        let mut names: Vec<String> = self.conditions.iter().map(|c| c.name()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Config("duplicate condition".into()));
        }
        if self.metrics.tde_m == 0 || self.metrics.tde_delay == 0 {
            return Err(PipelineError::Config("tde m and delay must be >= 1".into()));
        }
        if !(self.metrics.scanmatch.max_sub > 0.0) {
            return Err(PipelineError::Config("scanmatch max_sub must be positive".into()));
        }
        if let Some(b) = self.embedding.baseline {
            if !(b < 1.0) {
                return Err(PipelineError::Config("embedding baseline must be < 1".into()));
            }
        }
        self.vlm
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}
