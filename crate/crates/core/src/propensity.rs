//! Propensity scores `Pr(Z = 1 | X)` from ridge-stabilized logistic regression
//! fitted by iteratively reweighted least squares (Newton-Raphson).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::linalg::with_intercept;
use crate::stats::expit;

#[derive(Debug, Error, PartialEq)]
pub enum PropensityError {
    #[error("treatment indicator is constant")]
    ConstantTreatment,
    #[error("treatment indicator must be 0 or 1")]
    NonBinaryTreatment,
    #[error("design has {rows} rows but treatment vector has {len}")]
    LengthMismatch { rows: usize, len: usize },
    #[error("model expects {expected} covariates, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("information matrix is singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsConfig {
    /// Convergence threshold on the max-norm of the penalized score.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge penalty on the slopes (never on the intercept).
    pub ridge: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig { tol: 1e-8, max_iter: 50, ridge: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the penalized score at the returned coefficients.
    pub max_abs_score: f64,
    /// Set when the classes are (quasi-)perfectly separated; `converged` is
    /// then false and the coefficients are not meaningful.
    pub separation: bool,
}

fn penalized_loglik(a: &DMatrix<f64>, z: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = a * beta;
    let ll: f64 = eta
        .iter()
        .zip(z)
        .map(|(&e, &zi)| {
            // log(1 + exp(e)) computed stably
            let soft = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            zi * e - soft
        })
        .sum();
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Fits `logit Pr(z = 1) = b0 + x b` by Newton-Raphson with step halving.
///
/// `x` excludes the intercept column. Perfect separation is reported through
/// [`LogisticModel::separation`] rather than as an error.
pub fn fit_logistic_irls(x: &DMatrix<f64>, z: &[f64], config: &IrlsConfig) -> Result<LogisticModel, PropensityError> {
    let n = x.nrows();
    if z.len() != n {
        return Err(PropensityError::LengthMismatch { rows: n, len: z.len() });
    }
    if z.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(PropensityError::NonBinaryTreatment);
    }
    let rate = z.iter().sum::<f64>() / n as f64;
    if n == 0 || rate == 0.0 || rate == 1.0 {
        return Err(PropensityError::ConstantTreatment);
    }
    let a = with_intercept(x);
    let p = a.ncols();
    let zv = DVector::from_column_slice(z);
    let mut beta = DVector::zeros(p);
    beta[0] = (rate / (1.0 - rate)).ln();

    let score_at = |beta: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let mu = (&a * beta).map(expit);
        let mut g = a.tr_mul(&(&zv - &mu));
        for j in 1..p {
            g[j] -= config.ridge * beta[j];
        }
        (g, mu)
    };

    let (mut g, mut mu) = score_at(&beta);
    let mut ll = penalized_loglik(&a, z, &beta, config.ridge);
    let mut iterations = 0;
    let mut converged = g.amax() < config.tol;
    while !converged && iterations < config.max_iter {
        iterations += 1;
        let w = mu.map(|m| m * (1.0 - m));
        let mut h = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = a.row(i);
            let wi = w[i];
            for j in 0..p {
                let v = wi * row[j];
                for k in j..p {
                    h[(j, k)] += v * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                h[(j, k)] = h[(k, j)];
            }
            if j > 0 {
                h[(j, j)] += config.ridge;
            }
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => {
                // Fitted probabilities saturated at 0/1; nudge the diagonal.
                let jitter = 1e-10 * (1.0 + h.diagonal().amax());
                let h2 = h + DMatrix::identity(p, p) * jitter;
                h2.cholesky().ok_or(PropensityError::Singular)?.solve(&g)
            }
        };
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let cand_ll = penalized_loglik(&a, z, &cand, config.ridge);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || t < 1e-10 {
                beta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        let (g2, mu2) = score_at(&beta);
        g = g2;
        mu = mu2;
        converged = g.amax() < config.tol;
    }

    let max_resid = mu.iter().zip(z).map(|(m, zi)| (zi - m).abs()).fold(0.0, f64::max);
    let max_eta = (&a * &beta).amax();
    let separation = max_resid < 1e-6 || (!converged && max_eta > 25.0);
    Ok(LogisticModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        converged: converged && !separation,
        iterations,
        max_abs_score: g.amax(),
        separation,
    })
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, PropensityError> {
        if x.ncols() != self.coefficients.len() {
            return Err(PropensityError::ArityMismatch { expected: self.coefficients.len(), got: x.ncols() });
        }
        Ok(x.row_iter()
            .map(|r| self.intercept + r.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Inverse-logit of the linear predictor, kept strictly inside (0, 1).
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, PropensityError> {
        Ok(self.linear_predictor(x)?.into_iter().map(|e| expit(e.clamp(-36.0, 36.0))).collect())
    }
}

pub fn predict_propensity(model: &LogisticModel, x: &DMatrix<f64>) -> Result<Vec<f64>, PropensityError> {
    model.predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    /// Scores strictly outside `[lo, hi]`.
    pub violations: usize,
    pub min: f64,
    pub max: f64,
    pub bounds: (f64, f64),
}

pub const DEFAULT_BOUNDS: (f64, f64) = (0.01, 0.99);

pub fn positivity_report(e: &[f64], bounds: (f64, f64)) -> PositivityReport {
    let (lo, hi) = bounds;
    PositivityReport {
        violations: e.iter().filter(|&&v| v < lo || v > hi).count(),
        min: e.iter().copied().fold(f64::INFINITY, f64::min),
        max: e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bounds,
    }
}

/// Clamps scores into `[lo, hi]`.
pub fn truncate(e: &[f64], bounds: (f64, f64)) -> Vec<f64> {
    e.iter().map(|v| v.clamp(bounds.0, bounds.1)).collect()
}

/// Main-effects propensity model on the given expanded columns.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub model: LogisticModel,
    pub columns: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn fit_propensity(d: &Dataset, columns: &[usize], config: &IrlsConfig) -> Result<PropensityFit, PropensityError> {
    let x = d.design(columns);
    let model = fit_logistic_irls(&x, &d.z(), config)?;
    let scores = model.predict(&x)?;
    Ok(PropensityFit { model, columns: columns.to_vec(), scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> (DMatrix<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut z = Vec::new();
        for (xv, treated, control) in [(1.0, 30, 10), (0.0, 10, 30)] {
            for _ in 0..treated {
                x.push(xv);
                z.push(1.0);
            }
            for _ in 0..control {
                x.push(xv);
                z.push(0.0);
            }
        }
        (DMatrix::from_column_slice(x.len(), 1, &x), z)
    }

    #[test]
    fn saturated_two_by_two_closed_form() {
        let (x, z) = two_by_two();
        let m = fit_logistic_irls(&x, &z, &IrlsConfig::default()).unwrap();
        assert!(m.converged);
        assert!((m.intercept - (10.0f64 / 30.0).ln()).abs() < 1e-6);
        assert!((m.coefficients[0] - (9.0f64).ln()).abs() < 1e-6);
        let e = m.predict(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((e[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn zero_design_gives_logit_of_rate() {
        let x = DMatrix::zeros(10, 2);
        let z = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = fit_logistic_irls(&x, &z, &IrlsConfig::default()).unwrap();
        assert!((m.intercept - (0.3f64 / 0.7).ln()).abs() < 1e-10);
        assert!(m.coefficients.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn separation_is_flagged() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let z = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = fit_logistic_irls(&x, &z, &IrlsConfig::default()).unwrap();
        assert!(m.separation);
        assert!(!m.converged);
    }

    #[test]
    fn constant_treatment_is_an_error() {
        let x = DMatrix::zeros(3, 1);
        assert_eq!(
            fit_logistic_irls(&x, &[1.0, 1.0, 1.0], &IrlsConfig::default()),
            Err(PropensityError::ConstantTreatment)
        );
    }

    fn noisy_data() -> (DMatrix<f64>, Vec<f64>) {
        // Deterministic pseudo-random design with overlap.
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |i, j| (((i * 37 + j * 11) % 97) as f64 / 97.0 - 0.5) * (1.0 + j as f64 * 9.0));
        let z = (0..n)
            .map(|i| {
                let eta = 0.3 + 1.5 * x[(i, 0)] - 0.1 * x[(i, 1)];
                let u = ((i * 7919) % 1000) as f64 / 1000.0;
                if u < expit(eta) { 1.0 } else { 0.0 }
            })
            .collect();
        (x, z)
    }

    #[test]
    fn score_equation_and_mean_rate_at_convergence() {
        let (x, z) = noisy_data();
        let cfg = IrlsConfig::default();
        let m = fit_logistic_irls(&x, &z, &cfg).unwrap();
        assert!(m.converged && m.max_abs_score < cfg.tol);
        let e = m.predict(&x).unwrap();
        let rate = z.iter().sum::<f64>() / z.len() as f64;
        assert!((e.iter().sum::<f64>() / e.len() as f64 - rate).abs() < 1e-9);
        // Independent recomputation of the penalized score.
        for j in 0..2 {
            let s: f64 = (0..z.len()).map(|i| x[(i, j)] * (z[i] - e[i])).sum::<f64>() - cfg.ridge * m.coefficients[j];
            assert!(s.abs() < 1e-7);
        }
    }

    #[test]
    fn affine_rescaling_leaves_predictions_unchanged() {
        let (x, z) = noisy_data();
        let m = fit_logistic_irls(&x, &z, &IrlsConfig::default()).unwrap();
        let mut x2 = x.clone();
        x2.column_mut(1).iter_mut().for_each(|v| *v = *v * 4.0 + 7.0);
        let m2 = fit_logistic_irls(&x2, &z, &IrlsConfig::default()).unwrap();
        assert!((m2.coefficients[1] * 4.0 - m.coefficients[1]).abs() < 1e-6);
        let (e1, e2) = (m.predict(&x).unwrap(), m2.predict(&x2).unwrap());
        assert!(e1.iter().zip(&e2).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn predictions_are_monotone_in_positive_coefficient() {
        let m = LogisticModel {
            intercept: 0.0,
            coefficients: vec![0.7],
            converged: true,
            iterations: 0,
            max_abs_score: 0.0,
            separation: false,
        };
        let x = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 2.0]);
        let e = m.predict(&x).unwrap();
        assert!(e[0] < e[1] && e[1] < e[2]);
        assert_eq!(e[1], 0.5);
        assert!(matches!(m.predict(&DMatrix::zeros(1, 2)), Err(PropensityError::ArityMismatch { .. })));
    }

    #[test]
    fn positivity_counts_and_truncation() {
        assert_eq!(positivity_report(&[0.5; 10], DEFAULT_BOUNDS).violations, 0);
        let r = positivity_report(&[0.5, 0.999], DEFAULT_BOUNDS);
        assert_eq!(r.violations, 1);
        assert_eq!(truncate(&[0.5, 0.999], DEFAULT_BOUNDS), vec![0.5, 0.99]);
        let grid: Vec<f64> = (1..200).map(|k| k as f64 / 200.0).collect();
        assert_eq!(grid.len(), 199);
        assert_eq!(positivity_report(&grid, DEFAULT_BOUNDS).violations, 2);
    }
}
