//! Linear outcome models: (weighted) least squares with HC2 robust covariance,
//! and regression adjustment by g-computation.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::estimate::{EffectEstimate, Estimand};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats;

#[derive(Debug, Error)]
pub enum OutcomeError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("need more than {needed} units, have {have}")]
    TooFewUnits { needed: usize, have: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("design has {rows} rows but response has {len}")]
    LengthMismatch { rows: usize, len: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Relative pivot size below which the design is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;
/// Relative pivot size below which the ridge fallback is used.
const RIDGE_TOL: f64 = 1e-8;
const FALLBACK_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    /// Intercept first, then one slope per design column.
    pub coefficients: Vec<f64>,
    /// Residual variance `sum w e^2 / (n - p)`.
    pub sigma2: f64,
    /// HC2 heteroskedasticity-robust covariance of `coefficients`.
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    /// Classical `sigma2 (X'WX)^-1`.
    #[serde(skip)]
    pub vcov_classical: DMatrix<f64>,
    /// Set when the near-singular design was solved with a tiny ridge.
    pub ridge_fallback: bool,
    /// Units with positive weight.
    pub n: usize,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        x.row_iter()
            .map(|r| self.coefficients[0] + r.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// HC2 standard error of coefficient `j` (0 = intercept).
    pub fn se(&self, j: usize) -> f64 {
        self.vcov[(j, j)].max(0.0).sqrt()
    }
}

/// Least squares of `y` on `[1, x]`, optionally weighted. Rows with zero
/// weight are dropped.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<LinearModel, OutcomeError> {
    let n_all = x.nrows();
    if y.len() != n_all {
        return Err(OutcomeError::LengthMismatch { rows: n_all, len: y.len() });
    }
    if let Some(w) = weights {
        if w.len() != n_all || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OutcomeError::InvalidWeights("weights must be finite, nonnegative, one per row".into()));
        }
    }
    let rows: Vec<usize> = (0..n_all).filter(|&i| weights.map_or(true, |w| w[i] > 0.0)).collect();
    let n = rows.len();
    let p = x.ncols() + 1;
    if n <= p {
        return Err(OutcomeError::TooFewUnits { needed: p, have: n });
    }
    let sw: Vec<f64> = rows.iter().map(|&i| weights.map_or(1.0, |w| w[i]).sqrt()).collect();
    let mut a = DMatrix::from_fn(n, p, |r, j| sw[r] * if j == 0 { 1.0 } else { x[(rows[r], j - 1)] });
    let b = DVector::from_fn(n, |r, _| sw[r] * y[rows[r]]);
    let scale: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    if scale.iter().any(|&s| s == 0.0) {
        return Err(OutcomeError::RankDeficient);
    }
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }

    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let ratio = diag.iter().copied().fold(f64::INFINITY, f64::min) / diag.iter().copied().fold(0.0, f64::max);
    if ratio < RANK_TOL {
        return Err(OutcomeError::RankDeficient);
    }
    let ridge_fallback = ratio < RIDGE_TOL;
    let (beta_s, bread) = if ridge_fallback {
        let g = a.tr_mul(&a) + DMatrix::identity(p, p) * FALLBACK_RIDGE;
        let chol = g.cholesky().ok_or(OutcomeError::RankDeficient)?;
        (chol.solve(&a.tr_mul(&b)), chol.inverse())
    } else {
        let qtb = qr.q().tr_mul(&b);
        let beta = r.solve_upper_triangular(&qtb).ok_or(OutcomeError::RankDeficient)?;
        let rinv = r.solve_upper_triangular(&DMatrix::identity(p, p)).ok_or(OutcomeError::RankDeficient)?;
        (beta, &rinv * rinv.transpose())
    };
    let resid = &b - &a * &beta_s;
    let sse: f64 = resid.iter().map(|e| e * e).sum();
    let sigma2 = sse / (n - p) as f64;

    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let ai = a.row(i).transpose();
        let h = (ai.transpose() * &bread * &ai)[(0, 0)];
        if h >= 1.0 - 1e-12 {
            continue;
        }
        meat += &ai * ai.transpose() * (resid[i] * resid[i] / (1.0 - h));
    }
    let vcov_s = &bread * meat * &bread;
    let unscale = |m: &DMatrix<f64>| DMatrix::from_fn(p, p, |j, k| m[(j, k)] / (scale[j] * scale[k]));
    Ok(LinearModel {
        coefficients: beta_s.iter().zip(&scale).map(|(b, s)| b / s).collect(),
        sigma2,
        vcov: unscale(&vcov_s),
        vcov_classical: unscale(&(&bread * sigma2)),
        ridge_fallback,
        n,
    })
}

/// Columns of `x` with nonzero variance over the given rows.
pub(crate) fn varying_columns(x: &DMatrix<f64>, rows: &[usize]) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| {
            let first = rows.first().map(|&i| x[(i, j)]);
            rows.iter().any(|&i| Some(x[(i, j)]) != first)
        })
        .collect()
}

fn select(x: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| x[(rows[i], cols[j])])
}

/// Fits `y ~ x` on the given rows, dropping columns constant on those rows.
/// Returns predictions for every row of `x`.
pub(crate) fn fit_predict_arm(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> Result<Vec<f64>, OutcomeError> {
    let cols = varying_columns(x, rows);
    if rows.len() <= cols.len() + 2 {
        return Err(OutcomeError::TooFewUnits { needed: cols.len() + 2, have: rows.len() });
    }
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let model = fit_ols(&select(x, rows, &cols), &ys, None)?;
    let all: Vec<usize> = (0..x.nrows()).collect();
    Ok(model.predict(&select(x, &all, &cols)))
}

/// Per-arm predictions `(mu1, mu0)` for every unit.
pub fn arm_predictions(x: &DMatrix<f64>, y: &[f64], treated: &[bool]) -> Result<(Vec<f64>, Vec<f64>), OutcomeError> {
    let t: Vec<usize> = (0..treated.len()).filter(|&i| treated[i]).collect();
    let c: Vec<usize> = (0..treated.len()).filter(|&i| !treated[i]).collect();
    Ok((fit_predict_arm(x, y, &t)?, fit_predict_arm(x, y, &c)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegAdjConfig {
    /// Single model with an additive treatment term instead of one model per arm.
    pub pooled: bool,
    pub bootstrap_reps: usize,
    pub include_centers: bool,
}

impl Default for RegAdjConfig {
    fn default() -> Self {
        RegAdjConfig { pooled: false, bootstrap_reps: 200, include_centers: true }
    }
}

fn pooled_fit(d: &Dataset, y: &[f64], cols: &[usize]) -> Result<LinearModel, OutcomeError> {
    let x = d.design(cols);
    let rows: Vec<usize> = (0..d.len()).collect();
    let keep = varying_columns(&x, &rows);
    let z = d.z();
    let design = DMatrix::from_fn(d.len(), keep.len() + 1, |i, j| if j == 0 { z[i] } else { x[(i, keep[j - 1])] });
    fit_ols(&design, y, None)
}

/// Point estimate of the regression-adjustment effect.
pub fn regression_adjustment_tau(d: &Dataset, outcome: &str, estimand: Estimand, config: &RegAdjConfig) -> Result<f64, OutcomeError> {
    let y = d.outcome(outcome)?;
    let cols = d.covariate_indices(config.include_centers);
    if config.pooled {
        return Ok(pooled_fit(d, &y, &cols)?.coefficients[1]);
    }
    let x = d.design(&cols);
    let treated = d.treated();
    let (mu1, mu0) = arm_predictions(&x, &y, &treated)?;
    let target: Vec<usize> = (0..d.len()).filter(|&i| estimand == Estimand::Ate || treated[i]).collect();
    Ok(target.iter().map(|&i| mu1[i] - mu0[i]).sum::<f64>() / target.len() as f64)
}

/// Regression adjustment. The per-arm (g-computation) form takes its standard
/// error from a treatment-stratified nonparametric bootstrap; the pooled form
/// reports the HC2 standard error of the treatment coefficient.
pub fn regression_adjustment(
    d: &Dataset,
    outcome: &str,
    estimand: Estimand,
    config: &RegAdjConfig,
    seed: u64,
) -> Result<EffectEstimate, OutcomeError> {
    let tau = regression_adjustment_tau(d, outcome, estimand, config)?;
    let se = if config.pooled {
        let y = d.outcome(outcome)?;
        pooled_fit(d, &y, &d.covariate_indices(config.include_centers))?.se(1)
    } else {
        let groups = [
            (0..d.len()).filter(|&i| d.units()[i].z).collect::<Vec<_>>(),
            (0..d.len()).filter(|&i| !d.units()[i].z).collect::<Vec<_>>(),
        ];
        let mut taus = Vec::with_capacity(config.bootstrap_reps);
        for b in 0..config.bootstrap_reps {
            let mut rng = rng_from_seed(derive_seed(seed, &[b as u64]));
            let idx: Vec<usize> = groups
                .iter()
                .flat_map(|g| (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).collect::<Vec<_>>())
                .collect();
            if let Ok(t) = regression_adjustment_tau(&d.resample(&idx), outcome, estimand, config) {
                taus.push(t);
            }
        }
        if taus.len() < 2 {
            f64::NAN
        } else {
            stats::sd(&taus)
        }
    };
    Ok(EffectEstimate::normal("regadj", estimand, tau, se, d.len()))
}
