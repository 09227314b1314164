use super::AnalysisError;

/// 1-based ranks with ties sharing the mean of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho as Pearson correlation of mid-ranks, after dropping
/// positions where either side is missing or NaN. Returns the coefficient
/// (if defined) and the number of pairs used. Undefined when fewer than 3
/// pairs remain or either side is constant.
pub fn spearman_pairwise(
    xs: &[Option<f64>],
    ys: &[Option<f64>],
) -> Result<(Option<f64>, usize), AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if !a.is_nan() && !b.is_nan() => Some((*a, *b)),
            _ => None,
        })
        .unzip();
    let n = x.len();
    if n < 3 {
        return Ok((None, n));
    }
    Ok((pearson(&mid_ranks(&x), &mid_ranks(&y)), n))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, AnalysisError> {
    let wrap = |v: &[f64]| v.iter().copied().map(Some).collect::<Vec<_>>();
    Ok(spearman_pairwise(&wrap(xs), &wrap(ys))?.0)
}
