use super::{dist, require_nonempty, SpatialError};
use crate::dataset::Fixation;

fn directed_hausdorff(a: &[Fixation], b: &[Fixation]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance over fixation positions; order-insensitive.
pub fn hausdorff(a: &[Fixation], b: &[Fixation]) -> Result<f64, SpatialError> {
    require_nonempty(a, b)?;
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// Delay vectors `(p_t, p_{t+delay}, ..., p_{t+(m-1)delay})` flattened over (x, y).
pub fn delay_embed(s: &[Fixation], m: usize, delay: usize) -> Vec<Vec<f64>> {
    let span = (m - 1) * delay;
    if s.len() <= span {
        return Vec::new();
    }
    (0..s.len() - span)
        .map(|t| {
            (0..m)
                .flat_map(|k| {
                    let p = &s[t + k * delay];
                    [p.x, p.y]
                })
                .collect()
        })
        .collect()
}

fn euclid(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn mean_nearest(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|u| b.iter().map(|v| euclid(u, v)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// Mean nearest-neighbour distance between delay embeddings, averaged over
/// both directions.
pub fn tde(a: &[Fixation], b: &[Fixation], m: usize, delay: usize) -> Result<f64, SpatialError> {
    if m == 0 || delay == 0 {
        return Err(SpatialError::InvalidParam(format!("tde m={m} delay={delay}")));
    }
    let need = (m - 1) * delay + 1;
    for s in [a, b] {
        if s.len() < need {
            return Err(SpatialError::TooShort {
                metric: "tde",
                need,
                got: s.len(),
            });
        }
    }
    let (ea, eb) = (delay_embed(a, m, delay), delay_embed(b, m, delay));
    Ok((mean_nearest(&ea, &eb) + mean_nearest(&eb, &ea)) / 2.0)
}
