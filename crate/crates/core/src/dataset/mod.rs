//! Scanpath datasets: manifest parsing, validation, pixel conversion and
//! within-image pair enumeration.
//!
//! The canonical on-disk format is a JSON manifest:
//!
//! ```json
//! [{"image_id": "img1", "image_path": "img1.png", "width_px": 1680, "height_px": 1050,
//!   "scanpaths": [{"subject_id": "s1",
//!                  "fixations": [{"x": 0.5, "y": 0.5, "duration_ms": 200.0}]}]}]
//! ```
//!
//! Coordinates are normalized to `[0, 1]`; image paths are resolved relative
//! to the manifest's directory.

pub mod coco;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest not found: {0}")]
    NotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("coordinate out of [0,1] at {path}: {value}")]
    CoordinateOutOfRange { path: String, value: f64 },
    #[error("duplicate subject_id {subject_id:?} in image {image_id:?}")]
    DuplicateSubject { image_id: String, subject_id: String },
    #[error("image {path} is {actual_w}x{actual_h} but manifest declares {declared_w}x{declared_h}")]
    DimensionMismatch {
        path: PathBuf,
        declared_w: u32,
        declared_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to serialize manifest: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// One fixation in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub duration_ms: f64,
}

impl Fixation {
    pub fn new(x: f64, y: f64, duration_ms: f64) -> Self {
        Self { x, y, duration_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scanpath {
    pub subject_id: String,
    pub fixations: Vec<Fixation>,
}

impl Scanpath {
    pub fn new(subject_id: impl Into<String>, fixations: Vec<Fixation>) -> Self {
        Self {
            subject_id: subject_id.into(),
            fixations,
        }
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }
}

/// A stimulus image together with every scanpath recorded on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub width_px: u32,
    pub height_px: u32,
    pub scanpaths: Vec<Scanpath>,
}

impl StimulusRecord {
    pub fn scanpath(&self, subject_id: &str) -> Option<&Scanpath> {
        self.scanpaths.iter().find(|s| s.subject_id == subject_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPoint {
    pub px: u32,
    pub py: u32,
}

/// Two scanpaths on the same image, with `subject_a < subject_b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScanpathPair {
    pub image_id: String,
    pub subject_a: String,
    pub subject_b: String,
}

impl ScanpathPair {
    /// Builds the canonical pair regardless of argument order. Returns `None`
    /// for a self-pair.
    pub fn new(image_id: impl Into<String>, s1: &str, s2: &str) -> Option<Self> {
        let (a, b) = match s1.cmp(s2) {
            std::cmp::Ordering::Less => (s1, s2),
            std::cmp::Ordering::Greater => (s2, s1),
            std::cmp::Ordering::Equal => return None,
        };
        Some(Self {
            image_id: image_id.into(),
            subject_a: a.to_string(),
            subject_b: b.to_string(),
        })
    }
}

/// Floor-converts a normalized fixation to pixel coordinates, clamping the
/// `x = 1.0` / `y = 1.0` edge onto the last pixel.
pub fn to_pixel(f: &Fixation, width: u32, height: u32) -> PixelPoint {
    PixelPoint {
        px: axis_to_pixel(f.x, width),
        py: axis_to_pixel(f.y, height),
    }
}

fn axis_to_pixel(v: f64, extent: u32) -> u32 {
    let max = extent.saturating_sub(1);
    let p = (v * f64::from(extent)).floor();
    if p <= 0.0 {
        0
    } else if p >= f64::from(max) {
        max
    } else {
        p as u32
    }
}

/// All `n(n-1)/2` canonical pairs of a record, ordered by
/// `(subject_a, subject_b)`.
pub fn enumerate_pairs(record: &StimulusRecord) -> Vec<ScanpathPair> {
    let mut subjects: Vec<&str> = record
        .scanpaths
        .iter()
        .map(|s| s.subject_id.as_str())
        .collect();
    subjects.sort_unstable();
    subjects.dedup();
    let mut pairs = Vec::with_capacity(subjects.len() * subjects.len().saturating_sub(1) / 2);
    for (i, a) in subjects.iter().enumerate() {
        for b in &subjects[i + 1..] {
            pairs.push(ScanpathPair {
                image_id: record.image_id.clone(),
                subject_a: (*a).to_string(),
                subject_b: (*b).to_string(),
            });
        }
    }
    pairs
}

pub fn total_scanpaths(records: &[StimulusRecord]) -> usize {
    records.iter().map(|r| r.scanpaths.len()).sum()
}

/// Reads and validates a manifest, including image existence and dimensions.
pub fn parse_dataset(path: &Path) -> Result<Vec<StimulusRecord>, DatasetError> {
    let records = parse_manifest_unchecked(path)?;
    for record in &records {
        check_image(record)?;
    }
    Ok(records)
}

/// Like [`parse_dataset`] but skips opening the image files.
pub fn parse_manifest_unchecked(path: &Path) -> Result<Vec<StimulusRecord>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::NotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, base)
}

/// Parses manifest JSON, resolving relative image paths against `base_dir`.
pub fn parse_manifest_str(
    text: &str,
    base_dir: &Path,
) -> Result<Vec<StimulusRecord>, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut records: Vec<StimulusRecord> =
        serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    for record in &mut records {
        if record.image_path.is_relative() {
            record.image_path = base_dir.join(&record.image_path);
        }
    }
    validate_records(&records)?;
    Ok(records)
}

/// Structural invariants that do not need the image files.
pub fn validate_records(records: &[StimulusRecord]) -> Result<(), DatasetError> {
    let mut image_ids = HashSet::new();
    for (ri, record) in records.iter().enumerate() {
        if !image_ids.insert(record.image_id.as_str()) {
            return Err(DatasetError::Schema {
                path: format!("[{ri}].image_id"),
                message: format!("duplicate image_id {:?}", record.image_id),
            });
        }
        if record.width_px == 0 || record.height_px == 0 {
            return Err(DatasetError::Schema {
                path: format!("[{ri}]"),
                message: "width_px and height_px must be positive".into(),
            });
        }
        let mut subjects = HashSet::new();
        for (si, sp) in record.scanpaths.iter().enumerate() {
            if !subjects.insert(sp.subject_id.as_str()) {
                return Err(DatasetError::DuplicateSubject {
                    image_id: record.image_id.clone(),
                    subject_id: sp.subject_id.clone(),
                });
            }
            if sp.fixations.is_empty() {
                return Err(DatasetError::Schema {
                    path: format!("[{ri}].scanpaths[{si}].fixations"),
                    message: "scanpath must contain at least one fixation".into(),
                });
            }
            for (fi, f) in sp.fixations.iter().enumerate() {
                let at = |field: &str| format!("[{ri}].scanpaths[{si}].fixations[{fi}].{field}");
                for (field, v) in [("x", f.x), ("y", f.y)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(DatasetError::CoordinateOutOfRange {
                            path: at(field),
                            value: v,
                        });
                    }
                }
                if !(f.duration_ms >= 0.0) || !f.duration_ms.is_finite() {
                    return Err(DatasetError::Schema {
                        path: at("duration_ms"),
                        message: format!("duration must be finite and >= 0, got {}", f.duration_ms),
                    });
                }
            }
        }
    }
    Ok(())
}

fn check_image(record: &StimulusRecord) -> Result<(), DatasetError> {
    if !record.image_path.exists() {
        return Err(DatasetError::NotFound(record.image_path.clone()));
    }
    let (w, h) =
        image::image_dimensions(&record.image_path).map_err(|source| DatasetError::Image {
            path: record.image_path.clone(),
            source,
        })?;
    if (w, h) != (record.width_px, record.height_px) {
        return Err(DatasetError::DimensionMismatch {
            path: record.image_path.clone(),
            declared_w: record.width_px,
            declared_h: record.height_px,
            actual_w: w,
            actual_h: h,
        });
    }
    Ok(())
}

/// Serializes records as a manifest. Image paths under the manifest's
/// directory are written relative to it.
pub fn manifest_to_string(
    records: &[StimulusRecord],
    manifest_dir: &Path,
) -> Result<String, DatasetError> {
    let relative: Vec<StimulusRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Ok(rel) = r.image_path.strip_prefix(manifest_dir) {
                r.image_path = rel.to_path_buf();
            }
            r
        })
        .collect();
    Ok(serde_json::to_string_pretty(&relative)?)
}

pub fn write_manifest(records: &[StimulusRecord], path: &Path) -> Result<(), DatasetError> {
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let text = manifest_to_string(records, dir)?;
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
