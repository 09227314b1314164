use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::{dist, SpatialError};
use crate::dataset::Fixation;

/// Five similarities in [0,1] and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiMatchScores {
    pub shape: f64,
    pub direction: f64,
    pub length: f64,
    pub position: f64,
    pub duration: f64,
    pub mean: f64,
}

impl MultiMatchScores {
    fn as_array(&self) -> [f64; 5] {
        [self.shape, self.direction, self.length, self.position, self.duration]
    }
}

type Vec2 = (f64, f64);

fn saccades(s: &[Fixation]) -> Vec<Vec2> {
    s.windows(2).map(|w| (w[1].x - w[0].x, w[1].y - w[0].y)).collect()
}

fn norm(v: Vec2) -> f64 {
    (v.0 * v.0 + v.1 * v.1).sqrt()
}

fn angle_between(u: Vec2, v: Vec2) -> f64 {
    let d = (u.1.atan2(u.0) - v.1.atan2(v.0)).abs();
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// Minimum-cost monotone path from (0,0) to (n-1,m-1) over node costs,
/// moves (1,0), (0,1), (1,1). Ties prefer the diagonal, then (1,0).
pub(crate) fn align(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost[0].len();
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = acc[i - 1][j - 1];
                }
                if i > 0 {
                    b = b.min(acc[i - 1][j]);
                }
                if j > 0 {
                    b = b.min(acc[i][j - 1]);
                }
                b
            };
            acc[i][j] = best + cost[i][j];
        }
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let diag = (i > 0 && j > 0).then(|| acc[i - 1][j - 1]);
        let up = (i > 0).then(|| acc[i - 1][j]);
        let left = (j > 0).then(|| acc[i][j - 1]);
        let best = [diag, up, left]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min);
        if diag == Some(best) {
            i -= 1;
            j -= 1;
        } else if up == Some(best) {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    path
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn scores_for_path(
    a: &[Fixation],
    b: &[Fixation],
    ua: &[Vec2],
    vb: &[Vec2],
    path: &[(usize, usize)],
) -> MultiMatchScores {
    let mut dims: [Vec<f64>; 5] = Default::default();
    for &(i, j) in path {
        let (u, v) = (ua[i], vb[j]);
        dims[0].push(norm((u.0 - v.0, u.1 - v.1)));
        dims[1].push(angle_between(u, v));
        dims[2].push((norm(u) - norm(v)).abs());
        dims[3].push(dist(&a[i], &b[j]));
        let (da, db) = (a[i].duration_ms, b[j].duration_ms);
        let hi = da.max(db);
        dims[4].push(if hi > 0.0 { (da - db).abs() / hi } else { 0.0 });
    }
    let scale = [2.0 * SQRT_2, PI, SQRT_2, SQRT_2, 1.0];
    let [shape, direction, length, position, duration]: [f64; 5] = std::array::from_fn(|k| {
        (1.0 - median(std::mem::take(&mut dims[k])) / scale[k]).clamp(0.0, 1.0)
    });
    MultiMatchScores {
        shape,
        direction,
        length,
        position,
        duration,
        mean: (shape + direction + length + position + duration) / 5.0,
    }
}

/// Saccade-vector alignment followed by per-dimension medians over the
/// aligned pairs. Coordinates are normalized, so each dimension is scaled
/// by its largest possible value.
pub fn multimatch(a: &[Fixation], b: &[Fixation]) -> Result<MultiMatchScores, SpatialError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(SpatialError::TooShort {
                metric: "multimatch",
                need: 2,
                got: s.len(),
            });
        }
    }
    let (ua, vb) = (saccades(a), saccades(b));
    let cost: Vec<Vec<f64>> = ua
        .iter()
        .map(|u| vb.iter().map(|v| norm((u.0 - v.0, u.1 - v.1))).collect())
        .collect();
    let transposed: Vec<Vec<f64>> = (0..vb.len())
        .map(|j| cost.iter().map(|row| row[j]).collect())
        .collect();
    // Tie-breaking depends on orientation; scoring both candidates and
    // keeping the larger makes the result independent of argument order.
    let p1 = align(&cost);
    let p2: Vec<(usize, usize)> = align(&transposed).into_iter().map(|(j, i)| (i, j)).collect();
    let s1 = scores_for_path(a, b, &ua, &vb, &p1);
    if p1 == p2 {
        return Ok(s1);
    }
    let s2 = scores_for_path(a, b, &ua, &vb, &p2);
    let ord = s1
        .as_array()
        .iter()
        .zip(s2.as_array())
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal);
    Ok(if ord.is_ge() { s1 } else { s2 })
}
