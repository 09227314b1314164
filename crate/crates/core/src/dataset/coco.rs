//! Import adapter for COCO-FreeView style fixation exports.
//!
//! The export is a JSON list of per-trial objects carrying `name` (image
//! file name), `subject`, and parallel `X`, `Y`, `T` arrays (positions and
//! fixation durations). Whether positions are pixels or normalized is not
//! encoded in the file, so the caller must say which via [`CoordinateUnits`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{validate_records, DatasetError, Fixation, Scanpath, StimulusRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateUnits {
    Normalized,
    Pixels,
}

impl std::str::FromStr for CoordinateUnits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "pixels" => Ok(Self::Pixels),
            other => Err(format!("unknown coordinate units {other:?} (expected normalized|pixels)")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Trial {
    name: String,
    subject: serde_json::Value,
    #[serde(rename = "X")]
    x: Vec<f64>,
    #[serde(rename = "Y")]
    y: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ImportOptions {
    pub coordinates: CoordinateUnits,
    pub width_px: u32,
    pub height_px: u32,
    pub image_dir: PathBuf,
    /// Keep at most this many images (sampled with `seed`).
    pub max_images: Option<usize>,
    /// Keep exactly this many scanpaths per image; images with fewer are dropped.
    pub scanpaths_per_image: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportStats {
    pub trials: usize,
    pub dropped_fixations: usize,
    pub dropped_scanpaths: usize,
    pub images: usize,
}

pub fn import_file(
    path: &Path,
    opts: &ImportOptions,
) -> Result<(Vec<StimulusRecord>, ImportStats), DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    import_str(&text, opts)
}

pub fn import_str(
    text: &str,
    opts: &ImportOptions,
) -> Result<(Vec<StimulusRecord>, ImportStats), DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let trials: Vec<Trial> =
        serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let mut stats = ImportStats {
        trials: trials.len(),
        ..Default::default()
    };

    let (sx, sy) = match opts.coordinates {
        CoordinateUnits::Normalized => (1.0, 1.0),
        CoordinateUnits::Pixels => (f64::from(opts.width_px), f64::from(opts.height_px)),
    };

    let mut by_image: BTreeMap<String, Vec<Scanpath>> = BTreeMap::new();
    for (i, trial) in trials.into_iter().enumerate() {
        if trial.x.len() != trial.y.len() || trial.x.len() != trial.t.len() {
            return Err(DatasetError::Schema {
                path: format!("[{i}]"),
                message: "X, Y and T must have equal lengths".into(),
            });
        }
        let subject = match &trial.subject {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let mut fixations = Vec::with_capacity(trial.x.len());
        for ((x, y), t) in trial.x.iter().zip(&trial.y).zip(&trial.t) {
            let (nx, ny) = (x / sx, y / sy);
            if (0.0..=1.0).contains(&nx) && (0.0..=1.0).contains(&ny) && *t >= 0.0 {
                fixations.push(Fixation::new(nx, ny, *t));
            } else {
                stats.dropped_fixations += 1;
            }
        }
        if fixations.is_empty() {
            stats.dropped_scanpaths += 1;
            continue;
        }
        let paths = by_image.entry(trial.name).or_default();
        if paths.iter().any(|p| p.subject_id == subject) {
            // repeated viewing by the same subject; keep the first
            stats.dropped_scanpaths += 1;
            continue;
        }
        paths.push(Scanpath::new(subject, fixations));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut images: Vec<(String, Vec<Scanpath>)> = by_image.into_iter().collect();
    if let Some(k) = opts.scanpaths_per_image {
        images.retain(|(_, paths)| paths.len() >= k);
        for (_, paths) in &mut images {
            paths.shuffle(&mut rng);
            paths.truncate(k);
            paths.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        }
    }
    if let Some(n) = opts.max_images {
        if images.len() > n {
            images.shuffle(&mut rng);
            images.truncate(n);
            images.sort_by(|a, b| a.0.cmp(&b.0));
        }
    }
    if stats.dropped_fixations > 0 {
        warn!(
            dropped = stats.dropped_fixations,
            "fixations outside the stimulus were dropped"
        );
    }

    let records: Vec<StimulusRecord> = images
        .into_iter()
        .map(|(name, scanpaths)| StimulusRecord {
            image_id: Path::new(&name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| name.clone()),
            image_path: opts.image_dir.join(&name),
            width_px: opts.width_px,
            height_px: opts.height_px,
            scanpaths,
        })
        .collect();
    stats.images = records.len();
    validate_records(&records)?;
    Ok((records, stats))
}
