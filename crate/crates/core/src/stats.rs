//! Small descriptive-statistics helpers shared across estimators.

/// Two-sided 95% normal critical value used for every Wald interval.
pub const Z_95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> f64 {
    let total: f64 = ws.iter().sum();
    xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / total
}

/// Variance under frequency-weight semantics: `sum w (x - m)^2 / (sum w - 1)`.
pub fn weighted_variance(xs: &[f64], ws: &[f64]) -> f64 {
    let total: f64 = ws.iter().sum();
    if total <= 1.0 {
        return f64::NAN;
    }
    let m = weighted_mean(xs, ws);
    xs.iter()
        .zip(ws)
        .map(|(x, w)| w * (x - m) * (x - m))
        .sum::<f64>()
        / (total - 1.0)
}

/// Linear-interpolation quantile of an already sorted slice (Hyndman & Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
