use serde::{Deserialize, Serialize};

use super::{require_nonempty, SpatialError};
use crate::dataset::Fixation;

/// Grid used for discretized metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    cols: u32,
    rows: u32,
}

impl GridSpec {
    pub const MAX_CELLS: u32 = 26 * 26;

    pub fn new(cols: u32, rows: u32) -> Result<Self, SpatialError> {
        if cols == 0 || rows == 0 || cols.saturating_mul(rows) > Self::MAX_CELLS {
            return Err(SpatialError::InvalidGrid(format!("{cols}x{rows}")));
        }
        Ok(Self { cols, rows })
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    /// Returns `(col, row)`.
    pub fn cell(&self, f: &Fixation) -> (u32, u32) {
        let axis = |v: f64, n: u32| ((v * n as f64).floor().max(0.0) as u32).min(n - 1);
        (axis(f.x, self.cols), axis(f.y, self.rows))
    }

    /// Two-letter label of a row-major symbol, e.g. 0 -> "AA", 27 -> "BB".
    pub fn label(symbol: u32) -> String {
        let hi = (b'A' + (symbol / 26) as u8) as char;
        let lo = (b'A' + (symbol % 26) as u8) as char;
        format!("{hi}{lo}")
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { cols: 14, rows: 8 }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = SpatialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SpatialError::InvalidGrid(s.to_string());
        let (c, r) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        Self::new(c.trim().parse().map_err(|_| bad())?, r.trim().parse().map_err(|_| bad())?)
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.cols, self.rows)
    }
}

impl TryFrom<String> for GridSpec {
    type Error = SpatialError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> Self {
        g.to_string()
    }
}

/// Row-major cell indices; repeated cells are kept.
pub fn discretize(s: &[Fixation], grid: GridSpec) -> Vec<u32> {
    s.iter()
        .map(|f| {
            let (c, r) = grid.cell(f);
            r * grid.cols + c
        })
        .collect()
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn levenshtein_grid(a: &[Fixation], b: &[Fixation], grid: GridSpec) -> Result<u32, SpatialError> {
    require_nonempty(a, b)?;
    Ok(levenshtein(&discretize(a, grid), &discretize(b, grid)) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMatchParams {
    pub max_sub: f64,
    pub gap: f64,
}

impl Default for ScanMatchParams {
    fn default() -> Self {
        Self { max_sub: 1.0, gap: 0.0 }
    }
}

/// Substitution score between two symbols: `max_sub` scaled down linearly
/// with the distance between cell centers.
pub fn substitution(s1: u32, s2: u32, grid: GridSpec, max_sub: f64) -> f64 {
    let (c1, r1) = ((s1 % grid.cols) as f64, (s1 / grid.cols) as f64);
    let (c2, r2) = ((s2 % grid.cols) as f64, (s2 / grid.cols) as f64);
    let max_d = (((grid.cols - 1) as f64).powi(2) + ((grid.rows - 1) as f64).powi(2)).sqrt();
    if max_d == 0.0 {
        return max_sub;
    }
    let d = ((c1 - c2).powi(2) + (r1 - r2).powi(2)).sqrt();
    max_sub * (1.0 - d / max_d)
}

/// Raw Needleman-Wunsch score over symbol strings.
pub fn needleman_wunsch(a: &[u32], b: &[u32], grid: GridSpec, p: ScanMatchParams) -> f64 {
    let mut prev: Vec<f64> = (0..=b.len()).map(|j| j as f64 * p.gap).collect();
    let mut cur = vec![0.0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = (i + 1) as f64 * p.gap;
        for (j, &y) in b.iter().enumerate() {
            let diag = prev[j] + substitution(x, y, grid, p.max_sub);
            cur[j + 1] = diag.max(prev[j + 1] + p.gap).max(cur[j] + p.gap);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Alignment score normalized by `max_sub * max(|A|, |B|)` into [0,1].
pub fn scanmatch(
    a: &[Fixation],
    b: &[Fixation],
    grid: GridSpec,
    p: ScanMatchParams,
) -> Result<f64, SpatialError> {
    require_nonempty(a, b)?;
    if !(p.max_sub > 0.0) || !p.gap.is_finite() {
        return Err(SpatialError::InvalidParam(format!(
            "scanmatch max_sub {} gap {}",
            p.max_sub, p.gap
        )));
    }
    let raw = needleman_wunsch(&discretize(a, grid), &discretize(b, grid), grid, p);
    Ok((raw / (p.max_sub * a.len().max(b.len()) as f64)).clamp(0.0, 1.0))
}
