//! Propensity-score weighting: IPW, augmented IPW and weighted regression.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::estimate::{EffectEstimate, Estimand};
use crate::outcome::{arm_predictions, fit_ols, varying_columns, OutcomeError};
use crate::propensity::{fit_propensity, IrlsConfig, PropensityError, DEFAULT_BOUNDS};
use crate::stats;

#[derive(Debug, Error)]
pub enum WeightingError {
    #[error("propensity score {value} at row {index} lies outside the truncation bounds")]
    ExtremePropensity { index: usize, value: f64 },
    #[error("propensity score {value} at row {index} is not in (0, 1)")]
    InvalidPropensity { index: usize, value: f64 },
    #[error("an arm has zero total weight")]
    DegenerateArm,
    #[error("input lengths differ")]
    LengthMismatch,
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    /// Hajek (per-arm normalized) weights; `false` gives Horvitz-Thompson.
    pub normalized: bool,
    /// Clamp scores into `bounds`. When off, scores outside are an error.
    pub truncate: bool,
    pub bounds: (f64, f64),
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { normalized: true, truncate: true, bounds: DEFAULT_BOUNDS }
    }
}

/// Per-unit weights. Raw weights are `z/e` and `(1-z)/(1-e)` for the ATE and
/// `1`, `e/(1-e)` for the ATT. When `normalized`, each arm's weights are
/// rescaled to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub estimand: Estimand,
    pub normalized: bool,
}

pub fn make_weights(z: &[bool], e: &[f64], estimand: Estimand, config: &WeightConfig) -> Result<WeightVector, WeightingError> {
    if z.len() != e.len() {
        return Err(WeightingError::LengthMismatch);
    }
    let (lo, hi) = config.bounds;
    let mut weights = Vec::with_capacity(z.len());
    for (i, (&zi, &ei)) in z.iter().zip(e).enumerate() {
        if !(ei > 0.0 && ei < 1.0) {
            return Err(WeightingError::InvalidPropensity { index: i, value: ei });
        }
        if !config.truncate && !(lo..=hi).contains(&ei) {
            return Err(WeightingError::ExtremePropensity { index: i, value: ei });
        }
        let e = if config.truncate { ei.clamp(lo, hi) } else { ei };
        weights.push(match (estimand, zi) {
            (Estimand::Ate, true) => 1.0 / e,
            (Estimand::Ate, false) => 1.0 / (1.0 - e),
            (Estimand::Att, true) => 1.0,
            (Estimand::Att, false) => e / (1.0 - e),
        });
    }
    if config.normalized {
        for arm in [true, false] {
            let total: f64 = z.iter().zip(&weights).filter(|(zi, _)| **zi == arm).map(|(_, w)| w).sum();
            if total <= 0.0 {
                return Err(WeightingError::DegenerateArm);
            }
            for (zi, w) in z.iter().zip(weights.iter_mut()) {
                if *zi == arm {
                    *w /= total;
                }
            }
        }
    }
    Ok(WeightVector { weights, estimand, normalized: config.normalized })
}

/// Difference of weighted arm means with a sandwich standard error that
/// treats the propensity scores as known.
pub fn ipw_estimate(y: &[f64], z: &[bool], w: &WeightVector) -> Result<EffectEstimate, WeightingError> {
    let n = y.len();
    if z.len() != n || w.weights.len() != n {
        return Err(WeightingError::LengthMismatch);
    }
    let arm = |treated: bool| {
        let (mut sw, mut swy) = (0.0, 0.0);
        for i in (0..n).filter(|&i| z[i] == treated) {
            sw += w.weights[i];
            swy += w.weights[i] * y[i];
        }
        (sw, swy)
    };
    let ((sw1, swy1), (sw0, swy0)) = (arm(true), arm(false));
    if sw1 <= 0.0 || sw0 <= 0.0 {
        return Err(WeightingError::DegenerateArm);
    }
    let (tau, se) = if w.normalized {
        let (m1, m0) = (swy1 / sw1, swy0 / sw0);
        let mut v = 0.0;
        for i in 0..n {
            let (m, s) = if z[i] { (m1, sw1) } else { (m0, sw0) };
            v += (w.weights[i] * (y[i] - m) / s).powi(2);
        }
        (m1 - m0, v.sqrt())
    } else {
        // Horvitz-Thompson: a mean of unit-level contributions over the target population.
        let n_target = match w.estimand {
            Estimand::Ate => n as f64,
            Estimand::Att => z.iter().filter(|&&t| t).count() as f64,
        };
        let phi: Vec<f64> = (0..n)
            .map(|i| n as f64 / n_target * if z[i] { w.weights[i] * y[i] } else { -w.weights[i] * y[i] })
            .collect();
        (stats::mean(&phi), stats::sd(&phi) / (n as f64).sqrt())
    };
    Ok(EffectEstimate::normal("ipw", w.estimand, tau, se, n))
}

/// Augmented IPW from outcome-model predictions `mu1`, `mu0` for every unit.
/// Scores are truncated to the default bounds. The standard error is the
/// empirical standard deviation of the unit-level summand over `sqrt(n)`.
pub fn aipw_estimate(
    y: &[f64],
    z: &[bool],
    e: &[f64],
    mu1: &[f64],
    mu0: &[f64],
    estimand: Estimand,
) -> Result<EffectEstimate, WeightingError> {
    let n = y.len();
    if [z.len(), e.len(), mu1.len(), mu0.len()].iter().any(|&l| l != n) {
        return Err(WeightingError::LengthMismatch);
    }
    let e: Vec<f64> = e.iter().map(|v| v.clamp(DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1)).collect();
    let (tau, phi) = match estimand {
        Estimand::Ate => {
            let phi: Vec<f64> = (0..n)
                .map(|i| {
                    let zi = if z[i] { 1.0 } else { 0.0 };
                    mu1[i] - mu0[i] + zi * (y[i] - mu1[i]) / e[i] - (1.0 - zi) * (y[i] - mu0[i]) / (1.0 - e[i])
                })
                .collect();
            (stats::mean(&phi), phi)
        }
        Estimand::Att => {
            let p = z.iter().filter(|&&t| t).count() as f64 / n as f64;
            if p == 0.0 {
                return Err(WeightingError::DegenerateArm);
            }
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    let r = y[i] - mu0[i];
                    if z[i] {
                        r / p
                    } else {
                        -e[i] / (1.0 - e[i]) * r / p
                    }
                })
                .collect();
            let tau = stats::mean(&raw);
            let phi = (0..n).map(|i| raw[i] - if z[i] { tau / p } else { 0.0 }).collect();
            (tau, phi)
        }
    };
    Ok(EffectEstimate::normal("aipw", estimand, tau, stats::sd(&phi) / (n as f64).sqrt(), n))
}

/// Weighted least squares of `y` on `(z, x)`; returns the `z` coefficient with
/// its HC2 standard error. Columns constant among positively weighted rows are
/// dropped.
pub fn ipw_regression_estimate(
    y: &[f64],
    z: &[bool],
    x: &DMatrix<f64>,
    w: &WeightVector,
) -> Result<EffectEstimate, WeightingError> {
    let n = y.len();
    if z.len() != n || x.nrows() != n || w.weights.len() != n {
        return Err(WeightingError::LengthMismatch);
    }
    let rows: Vec<usize> = (0..n).filter(|&i| w.weights[i] > 0.0).collect();
    let keep = varying_columns(x, &rows);
    let design = DMatrix::from_fn(n, keep.len() + 1, |i, j| {
        if j == 0 {
            if z[i] {
                1.0
            } else {
                0.0
            }
        } else {
            x[(i, keep[j - 1])]
        }
    });
    let model = fit_ols(&design, y, Some(&w.weights))?;
    Ok(EffectEstimate::normal("ipwra", w.estimand, model.coefficients[1], model.se(1), model.n))
}

/// Main-effects logistic propensity scores on every covariate column.
pub fn propensity_scores(d: &Dataset) -> Result<Vec<f64>, WeightingError> {
    Ok(fit_propensity(d, &d.covariate_indices(true), &IrlsConfig::default())?.scores)
}

pub fn ipw(d: &Dataset, outcome: &str, estimand: Estimand, config: &WeightConfig) -> Result<EffectEstimate, WeightingError> {
    let e = propensity_scores(d)?;
    let w = make_weights(&d.treated(), &e, estimand, config)?;
    ipw_estimate(&d.outcome(outcome)?, &d.treated(), &w)
}

/// AIPW with a main-effects propensity model and per-arm linear outcome models.
pub fn aipw(d: &Dataset, outcome: &str, estimand: Estimand) -> Result<EffectEstimate, WeightingError> {
    let e = propensity_scores(d)?;
    let y = d.outcome(outcome)?;
    let x = d.design(&d.covariate_indices(true));
    let (mu1, mu0) = arm_predictions(&x, &y, &d.treated())?;
    aipw_estimate(&y, &d.treated(), &e, &mu1, &mu0, estimand)
}

pub fn ipwra(d: &Dataset, outcome: &str, estimand: Estimand, config: &WeightConfig) -> Result<EffectEstimate, WeightingError> {
    let e = propensity_scores(d)?;
    let w = make_weights(&d.treated(), &e, estimand, config)?;
    let x = d.design(&d.covariate_indices(true));
    ipw_regression_estimate(&d.outcome(outcome)?, &d.treated(), &x, &w)
}
