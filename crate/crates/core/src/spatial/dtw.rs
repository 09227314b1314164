use super::{dist, require_nonempty, SpatialError};
use crate::dataset::Fixation;

/// Accumulated Euclidean cost of the best boundary-anchored warping path
/// with steps (1,0), (0,1), (1,1). Durations are ignored.
pub fn dtw(a: &[Fixation], b: &[Fixation]) -> Result<f64, SpatialError> {
    require_nonempty(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = best + dist(p, q);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}
