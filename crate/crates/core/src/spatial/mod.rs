//! Geometric and temporal similarity between fixation sequences in
//! normalized image coordinates.

mod dtw;
mod geometric;
mod grid;
mod multimatch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Fixation;

pub use dtw::dtw;
pub use geometric::{delay_embed, hausdorff, tde};
pub use grid::{
    discretize, levenshtein, levenshtein_grid, needleman_wunsch, scanmatch, substitution,
    GridSpec, ScanMatchParams,
};
pub use multimatch::{multimatch, MultiMatchScores};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpatialError {
    #[error("metric undefined for an empty scanpath")]
    Empty,
    #[error("{metric} needs at least {need} fixations, got {got}")]
    TooShort {
        metric: &'static str,
        need: usize,
        got: usize,
    },
    #[error("invalid grid {0:?}: need COLSxROWS with 1 <= cols*rows <= 676")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub(crate) fn dist(a: &Fixation, b: &Fixation) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    (dx * dx + dy * dy).sqrt()
}

pub(crate) fn require_nonempty(a: &[Fixation], b: &[Fixation]) -> Result<(), SpatialError> {
    if a.is_empty() || b.is_empty() {
        Err(SpatialError::Empty)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialParams {
    pub grid: GridSpec,
    pub tde_m: usize,
    pub tde_delay: usize,
    pub scanmatch: ScanMatchParams,
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            tde_m: 3,
            tde_delay: 1,
            scanmatch: ScanMatchParams::default(),
        }
    }
}

/// Raw spatial scores for one pair. `None` marks a metric that is undefined
/// for the pair (too few fixations); such values are never imputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialScoreSet {
    pub dtw: Option<f64>,
    pub scanmatch: Option<f64>,
    pub multimatch: Option<MultiMatchScores>,
    pub hausdorff: Option<f64>,
    pub tde: Option<f64>,
    pub levenshtein: Option<u32>,
}

pub fn compute_all(a: &[Fixation], b: &[Fixation], p: &SpatialParams) -> SpatialScoreSet {
    SpatialScoreSet {
        dtw: dtw(a, b).ok(),
        scanmatch: scanmatch(a, b, p.grid, p.scanmatch).ok(),
        multimatch: multimatch(a, b).ok(),
        hausdorff: hausdorff(a, b).ok(),
        tde: tde(a, b, p.tde_m, p.tde_delay).ok(),
        levenshtein: levenshtein_grid(a, b, p.grid).ok(),
    }
}
