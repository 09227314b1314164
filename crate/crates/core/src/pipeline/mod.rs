//! Resumable stages: describe, summarize, score, analyze. Each stage reads
//! and writes plain files in the output directory; model responses live in
//! the content-addressed cache.

pub mod artifacts;
mod config;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::analysis::{
    blur_diagnostics, correlation_matrix, default_blur_lexicon, divergence_all, normalize_spatial,
    BlurDiagnostics, PairScoreRecord, SpatialMetric,
};
use crate::cache::{CacheError, CacheStore};
use crate::dataset::{self, DatasetError, ScanpathPair, StimulusRecord};
use crate::encoding::{encode_fixation, encode_png, EncodingCondition, FixationRef};
use crate::report::render_heatmap;
use crate::semantic::{
    score_condition, tokenize, EmbedOptions, EmbeddingBackend, IdfWeights, OrthogonalStub,
    RemoteEmbedding, SemanticError,
};
use crate::spatial::{compute_all, SpatialScoreSet};
use crate::vlm::{prompts, HttpTransport, VlmClient, VlmTransport};
use artifacts::*;

pub use config::{EmbeddingConfig, RunConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error("stage input missing or malformed: {0}")]
    Artifact(String),
    #[error("cannot read image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Outcome of one or more stages. Failures are per-item problems that leave
/// the stage incomplete; warnings do not.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stages: Vec<String>,
    pub processed: usize,
    pub network_calls: usize,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        Self {
            stages: vec![stage.to_string()],
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: StageReport) {
        self.stages.extend(other.stages);
        self.processed += other.processed;
        self.network_calls += other.network_calls;
        self.failures.extend(other.failures);
        self.warnings.extend(other.warnings);
    }

    /// 0 when complete, 1 when any item failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    records: Vec<StimulusRecord>,
    client: VlmClient,
    embedder: Arc<dyn EmbeddingBackend>,
}

fn load_rgb(path: &Path) -> Result<RgbImage, PipelineError> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| PipelineError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

impl Pipeline {
    /// Builds HTTP backends from the configuration. Without a VLM endpoint,
    /// or with `offline`, the client serves from the cache only.
    pub fn from_config(cfg: RunConfig) -> Result<Self, PipelineError> {
        let transport: Option<Arc<dyn VlmTransport>> = match (&cfg.vlm.endpoint_url, cfg.offline) {
            (Some(url), false) => Some(Arc::new(HttpTransport::new(
                url,
                cfg.vlm.api_key.clone(),
                Duration::from_secs_f64(cfg.vlm.request_timeout_s),
            ))),
            _ => None,
        };
        let embedder: Arc<dyn EmbeddingBackend> = match &cfg.embedding.endpoint_url {
            Some(url) => {
                let cache = CacheStore::open(&cfg.cache_dir)?;
                Arc::new(
                    RemoteEmbedding::new(
                        (!cfg.offline).then(|| url.clone()),
                        cfg.embedding.model.clone(),
                        Duration::from_secs_f64(cfg.embedding.request_timeout_s),
                    )
                    .with_cache(cache)
                    .with_retries(cfg.vlm.max_retries, cfg.vlm.retry_base_s),
                )
            }
            None => {
                warn!("no embedding endpoint configured; embed_f1 uses the orthogonal stub");
                Arc::new(OrthogonalStub)
            }
        };
        Self::with_backends(cfg, transport, embedder)
    }

    pub fn with_backends(
        cfg: RunConfig,
        transport: Option<Arc<dyn VlmTransport>>,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let records = dataset::parse_dataset(&cfg.manifest)?;
        let cache = CacheStore::open(&cfg.cache_dir)?;
        let transport = if cfg.offline { None } else { transport };
        let client = VlmClient::new(cfg.vlm.clone(), transport, cache)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            records,
            client,
            embedder,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn records(&self) -> &[StimulusRecord] {
        &self.records
    }

    pub fn client(&self) -> &VlmClient {
        &self.client
    }

    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn write_run_config(&self) -> Result<(), PipelineError> {
        write_json(&run_config_path(self.out()), &self.cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.vlm.max_concurrent_requests)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Encodes and describes every fixation under every selected condition.
    pub fn describe(&self) -> Result<StageReport, PipelineError> {
        self.write_run_config()?;
        let mut report = StageReport::new("describe");
        let calls_before = self.client.network_calls();
        let pool = self.pool()?;
        let conditions = &self.cfg.conditions;
        let mut entries: Vec<Vec<DescriptionEntry>> = vec![Vec::new(); conditions.len()];
        if self.client.is_offline() {
            info!("no VLM endpoint or offline mode: describing from cache only");
        }

        for (n, rec) in self.records.iter().enumerate() {
            let img = load_rgb(&rec.image_path)?;
            let items: Vec<(usize, &str, usize, &dataset::Fixation)> = conditions
                .iter()
                .enumerate()
                .flat_map(|(ci, _)| {
                    rec.scanpaths.iter().flat_map(move |sp| {
                        sp.fixations
                            .iter()
                            .enumerate()
                            .map(move |(fi, f)| (ci, sp.subject_id.as_str(), fi, f))
                    })
                })
                .collect();
            let results: Vec<(usize, DescriptionEntry, Option<String>)> = pool.install(|| {
                items
                    .par_iter()
                    .map(|&(ci, subject, fi, f)| {
                        let (entry, failure) = self.describe_one(rec, &img, conditions[ci], subject, fi, f);
                        (ci, entry, failure)
                    })
                    .collect()
            });
            for (ci, entry, failure) in results {
                report.processed += 1;
                if let Some(f) = failure {
                    report.failures.push(f);
                }
                entries[ci].push(entry);
            }
            info!(image = %rec.image_id, done = n + 1, total = self.records.len(), "described");
        }

        for (c, entries) in conditions.iter().zip(entries) {
            let prompt = if c.is_patch() {
                prompts::PATCH_PROMPT
            } else {
                prompts::MARKER_PROMPT
            };
            write_json(
                &descriptions_path(self.out(), c),
                &DescriptionManifest {
                    condition: *c,
                    model_id: self.cfg.vlm.model_id.clone(),
                    prompt_hash: prompts::prompt_hash(prompt),
                    entries,
                },
            )?;
        }
        report.network_calls = self.client.network_calls() - calls_before;
        Ok(report)
    }

    fn describe_one(
        &self,
        rec: &StimulusRecord,
        img: &RgbImage,
        condition: EncodingCondition,
        subject: &str,
        fixation_index: usize,
        f: &dataset::Fixation,
    ) -> (DescriptionEntry, Option<String>) {
        let label = format!("{condition}/{}/{subject}/#{fixation_index}", rec.image_id);
        let mut entry = DescriptionEntry {
            image_id: rec.image_id.clone(),
            subject_id: subject.to_string(),
            fixation_index,
            cache_key: String::new(),
            text: None,
        };
        let center = dataset::to_pixel(f, rec.width_px, rec.height_px);
        let provenance = FixationRef {
            image_id: rec.image_id.clone(),
            subject_id: subject.to_string(),
            fixation_index,
        };
        let enc = match encode_fixation(img, center, condition, provenance) {
            Ok(e) => e,
            Err(e) => return (entry, Some(format!("{label}: encoding failed: {e}"))),
        };
        if let Some(dir) = &self.cfg.dump_encodings {
            if let Err(e) = write_bytes(&dir.join(enc.dump_file_name()), &enc.png) {
                warn!("{e}");
            }
        }
        entry.cache_key = self.client.description_key(&enc);
        match self.client.describe(&enc) {
            Ok(d) => {
                entry.text = Some(d.text);
                (entry, None)
            }
            Err(e) => (entry, Some(e.to_string())),
        }
    }

    fn load_description_manifest(&self, c: &EncodingCondition) -> Result<DescriptionManifest, PipelineError> {
        let path = descriptions_path(self.out(), c);
        if !path.is_file() {
            return Err(PipelineError::Artifact(format!(
                "{} not found; run describe for {c} first",
                path.display()
            )));
        }
        read_json(&path)
    }

    /// One summary per (condition, image, subject) from the stored
    /// descriptions. A scanpath with any missing description is not summarized.
    pub fn summarize(&self) -> Result<StageReport, PipelineError> {
        self.write_run_config()?;
        let mut report = StageReport::new("summarize");
        let calls_before = self.client.network_calls();
        let pool = self.pool()?;
        let conditions = &self.cfg.conditions;
        let keys: Vec<HashMap<(String, String, usize), String>> = conditions
            .iter()
            .map(|c| {
                Ok(self
                    .load_description_manifest(c)?
                    .entries
                    .into_iter()
                    .map(|e| ((e.image_id, e.subject_id, e.fixation_index), e.cache_key))
                    .collect())
            })
            .collect::<Result<_, PipelineError>>()?;
        let mut entries: Vec<Vec<SummaryEntry>> = vec![Vec::new(); conditions.len()];

        for rec in &self.records {
            let png = encode_png(&load_rgb(&rec.image_path)?).map_err(|e| PipelineError::Image {
                path: rec.image_path.clone(),
                message: e.to_string(),
            })?;
            let items: Vec<(usize, &dataset::Scanpath)> = (0..conditions.len())
                .flat_map(|ci| rec.scanpaths.iter().map(move |sp| (ci, sp)))
                .collect();
            let results: Vec<(usize, SummaryEntry)> = pool.install(|| {
                items
                    .par_iter()
                    .map(|&(ci, sp)| (ci, self.summarize_one(rec, &png, conditions[ci], sp, &keys[ci])))
                    .collect()
            });
            for (ci, entry) in results {
                report.processed += 1;
                if let Some(e) = &entry.error {
                    report.failures.push(e.clone());
                }
                entries[ci].push(entry);
            }
        }
        for (c, entries) in conditions.iter().zip(entries) {
            write_json(
                &summaries_path(self.out(), c),
                &SummaryManifest {
                    condition: *c,
                    model_id: self.cfg.vlm.model_id.clone(),
                    entries,
                },
            )?;
        }
        report.network_calls = self.client.network_calls() - calls_before;
        Ok(report)
    }

    fn summarize_one(
        &self,
        rec: &StimulusRecord,
        png: &[u8],
        condition: EncodingCondition,
        sp: &dataset::Scanpath,
        keys: &HashMap<(String, String, usize), String>,
    ) -> SummaryEntry {
        let mut entry = SummaryEntry {
            image_id: rec.image_id.clone(),
            subject_id: sp.subject_id.clone(),
            cache_key: None,
            text: None,
            source_description_hashes: Vec::new(),
            error: None,
        };
        let mut descriptions = Vec::with_capacity(sp.len());
        for i in 0..sp.len() {
            let label = format!("{condition}/{}/{}/#{i}", rec.image_id, sp.subject_id);
            let found = keys
                .get(&(rec.image_id.clone(), sp.subject_id.clone(), i))
                .filter(|k| !k.is_empty())
                .map(|k| (k, self.client.load_description(k)));
            match found {
                Some((_, Ok(Some(d)))) => descriptions.push(d),
                Some((k, Ok(None))) => {
                    entry.error = Some(format!("{label}: description missing from cache (key {k})"));
                    return entry;
                }
                Some((_, Err(e))) => {
                    entry.error = Some(format!("{label}: {e}"));
                    return entry;
                }
                None => {
                    entry.error = Some(format!("{label}: no description recorded; run describe"));
                    return entry;
                }
            }
        }
        match self.client.summarize_scanpath(png, &descriptions) {
            Ok(s) => {
                entry.cache_key = Some(s.cache_key);
                entry.text = Some(s.text);
                entry.source_description_hashes = s.source_description_hashes;
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entry
    }

    /// Spatial scores for every within-image pair, in manifest order.
    pub fn spatial_scores(&self) -> Vec<(ScanpathPair, SpatialScoreSet)> {
        let jobs: Vec<(&StimulusRecord, ScanpathPair)> = self
            .records
            .iter()
            .flat_map(|r| dataset::enumerate_pairs(r).into_iter().map(move |p| (r, p)))
            .collect();
        jobs.into_par_iter()
            .map(|(rec, pair)| {
                let a = rec.scanpath(&pair.subject_a).expect("pair subject exists");
                let b = rec.scanpath(&pair.subject_b).expect("pair subject exists");
                let s = compute_all(&a.fixations, &b.fixations, &self.cfg.metrics);
                (pair, s)
            })
            .collect()
    }

    /// Semantic and spatial scores for every pair in every condition.
    pub fn score(&self) -> Result<StageReport, PipelineError> {
        self.write_run_config()?;
        let mut report = StageReport::new("score");
        let spatial = self.spatial_scores();

        for c in &self.cfg.conditions {
            let path = summaries_path(self.out(), c);
            if !path.is_file() {
                return Err(PipelineError::Artifact(format!(
                    "{} not found; run summarize for {c} first",
                    path.display()
                )));
            }
            let manifest: SummaryManifest = read_json(&path)?;
            let mut index: HashMap<(String, String), usize> = HashMap::new();
            let mut texts: Vec<String> = Vec::new();
            for e in manifest.entries {
                if let Some(t) = e.text {
                    index.insert((e.image_id, e.subject_id), texts.len());
                    texts.push(t);
                }
            }
            if texts.is_empty() {
                report.failures.push(format!("{c}: no summaries available"));
                continue;
            }
            let mut kept: Vec<(ScanpathPair, SpatialScoreSet)> = Vec::new();
            let mut idx: Vec<(usize, usize)> = Vec::new();
            for (pair, s) in &spatial {
                let a = index.get(&(pair.image_id.clone(), pair.subject_a.clone()));
                let b = index.get(&(pair.image_id.clone(), pair.subject_b.clone()));
                match (a, b) {
                    (Some(&i), Some(&j)) => {
                        kept.push((pair.clone(), *s));
                        idx.push((i, j));
                    }
                    _ => report.failures.push(format!(
                        "{c}/{}/{}-{}: pair skipped, summary missing",
                        pair.image_id, pair.subject_a, pair.subject_b
                    )),
                }
            }
            let opts = EmbedOptions {
                idf: self.cfg.embedding.idf.then(|| {
                    IdfWeights::from_corpus(&texts.iter().map(|t| tokenize(t)).collect::<Vec<_>>())
                }),
                baseline: self.cfg.embedding.baseline,
            };
            let semantic = score_condition(&texts, &idx, self.embedder.as_ref(), &opts)?;
            let mut records: Vec<PairScoreRecord> = kept
                .into_iter()
                .zip(semantic)
                .map(|((pair, spatial), semantic)| PairScoreRecord {
                    pair,
                    condition: *c,
                    semantic,
                    spatial,
                    normalized_spatial: Default::default(),
                })
                .collect();
            for w in normalize_spatial(&mut records, self.cfg.norm_scope) {
                report.warnings.push(format!("{c}: {w}"));
            }
            report.processed += records.len();
            write_pairs_csv(&pairs_path(self.out(), c), &records)?;
            info!(condition = %c, pairs = records.len(), "scored");
        }
        Ok(report)
    }

    fn blur_lexicon(&self) -> Result<Vec<String>, PipelineError> {
        match &self.cfg.blur_lexicon {
            None => Ok(default_blur_lexicon()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
                let lex: Vec<String> = text
                    .lines()
                    .map(|l| l.trim().to_lowercase())
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .collect();
                if lex.is_empty() {
                    return Err(PipelineError::Config(format!("{}: empty lexicon", p.display())));
                }
                Ok(lex)
            }
        }
    }

    /// Correlation matrix, divergence table, diagnostics and heatmap per condition.
    pub fn analyze(&self) -> Result<StageReport, PipelineError> {
        self.write_run_config()?;
        let mut report = StageReport::new("analyze");
        let lexicon = self.blur_lexicon()?;
        for c in &self.cfg.conditions {
            let path = pairs_path(self.out(), c);
            if !path.is_file() {
                return Err(PipelineError::Artifact(format!(
                    "{} not found; run score for {c} first",
                    path.display()
                )));
            }
            let mut records = read_pairs_csv(&path)?;
            let norm_warnings = normalize_spatial(&mut records, self.cfg.norm_scope);
            let matrix = correlation_matrix(&c.name(), &records);
            write_json(&correlation_path(self.out(), c), &matrix)?;

            let mut div = divergence_all(&records);
            div.truncate(self.cfg.top_k);
            write_divergence_csv(&divergence_path(self.out(), c), &div)?;

            let blur = match self.load_description_manifest(c) {
                Ok(m) => {
                    let texts: Vec<String> = m.entries.into_iter().filter_map(|e| e.text).collect();
                    Some(blur_diagnostics(&texts, &lexicon))
                }
                Err(_) => {
                    report
                        .warnings
                        .push(format!("{c}: no description manifest, blur diagnostics skipped"));
                    None
                }
            };
            let missing = SpatialMetric::ALL
                .iter()
                .map(|m| {
                    let n = records.iter().filter(|r| r.normalized_spatial.get(*m).is_none()).count();
                    (m.name().to_string(), n)
                })
                .collect();
            write_json(
                &diagnostics_path(self.out(), c),
                &Diagnostics {
                    condition: c.name(),
                    n_pairs: records.len(),
                    missing_spatial: missing,
                    normalization_warnings: norm_warnings.clone(),
                    blur,
                },
            )?;
            write_bytes(&heatmap_path(self.out(), c), render_heatmap(&matrix).as_bytes())?;
            report.warnings.extend(norm_warnings.into_iter().map(|w| format!("{c}: {w}")));
            report.processed += 1;
        }
        Ok(report)
    }

    pub fn run_all(&self) -> Result<StageReport, PipelineError> {
        let mut report = self.describe()?;
        report.merge(self.summarize()?);
        report.merge(self.score()?);
        report.merge(self.analyze()?);
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub condition: String,
    pub n_pairs: usize,
    /// Pairs with no normalized value, per spatial metric.
    pub missing_spatial: BTreeMap<String, usize>,
    pub normalization_warnings: Vec<String>,
    pub blur: Option<BlurDiagnostics>,
}
