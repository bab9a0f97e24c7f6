//! Lasso by cyclic coordinate descent.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cv::fold_assignment;

const TOL: f64 = 1e-7;
const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    /// Fixed penalty; `None` picks it by cross-validation over a grid.
    pub lambda: Option<f64>,
    pub n_lambda: usize,
    pub cv_folds: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig { lambda: None, n_lambda: 20, cv_folds: 5 }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda.is_some_and(|l| !(l >= 0.0)) {
            return Err("lasso lambda must be nonnegative".into());
        }
        if self.lambda.is_none() && (self.n_lambda == 0 || self.cv_folds < 2) {
            return Err("lasso needs n_lambda >= 1 and cv_folds >= 2".into());
        }
        Ok(())
    }
}

/// Coefficients on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
}

impl LassoFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        x.row_iter().map(|r| self.intercept + r.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()).collect()
    }
}

/// Columns centered and scaled to unit variance (divisor n).
struct Standardized {
    z: DMatrix<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
    y_mean: f64,
    yc: Vec<f64>,
}

fn standardize(x: &DMatrix<f64>, y: &[f64]) -> Standardized {
    let (n, p) = x.shape();
    let mut z = x.clone();
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let m = x.column(j).sum() / n as f64;
        let s = (x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        means[j] = m;
        sds[j] = s;
        for i in 0..n {
            z[(i, j)] = if s > 0.0 { (x[(i, j)] - m) / s } else { 0.0 };
        }
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    Standardized { z, means, sds, y_mean, yc: y.iter().map(|v| v - y_mean).collect() }
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    v.signum() * (v.abs() - lambda).max(0.0)
}

/// Minimizes `(1/2n) |y - Xb|^2 + lambda |b|_1` on standardized columns,
/// starting from `beta` (warm start).
fn coordinate_descent(s: &Standardized, lambda: f64, beta: &mut [f64]) {
    let (n, p) = s.z.shape();
    let nf = n as f64;
    let mut resid: Vec<f64> = (0..n).map(|i| s.yc[i] - (0..p).map(|j| s.z[(i, j)] * beta[j]).sum::<f64>()).collect();
    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if s.sds[j] == 0.0 {
                continue;
            }
            let col = s.z.column(j);
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + beta[j];
            let new = soft_threshold(rho, lambda);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col.iter()) {
                    *r -= a * delta;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < TOL {
            break;
        }
    }
}

fn unstandardize(s: &Standardized, beta: &[f64], lambda: f64) -> LassoFit {
    let coefficients: Vec<f64> = beta.iter().zip(&s.sds).map(|(b, sd)| if *sd > 0.0 { b / sd } else { 0.0 }).collect();
    let intercept = s.y_mean - coefficients.iter().zip(&s.means).map(|(b, m)| b * m).sum::<f64>();
    LassoFit { intercept, coefficients, lambda }
}

/// Lasso at a fixed penalty. Columns are standardized internally.
pub fn fit_lasso(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> LassoFit {
    let s = standardize(x, y);
    let mut beta = vec![0.0; x.ncols()];
    coordinate_descent(&s, lambda, &mut beta);
    unstandardize(&s, &beta, lambda)
}

/// Smallest penalty at which every slope is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let s = standardize(x, y);
    let n = y.len() as f64;
    (0..x.ncols()).map(|j| s.z.column(j).iter().zip(&s.yc).map(|(a, b)| a * b).sum::<f64>().abs() / n).fold(0.0, f64::max)
}

/// Log-spaced grid from `lambda_max` down to `lambda_max / 1000`.
pub fn lambda_grid(x: &DMatrix<f64>, y: &[f64], n_lambda: usize) -> Vec<f64> {
    let top = lambda_max(x, y).max(1e-12);
    if n_lambda == 1 {
        return vec![top];
    }
    (0..n_lambda).map(|k| top * 1e-3f64.powf(k as f64 / (n_lambda - 1) as f64)).collect()
}

fn path(x: &DMatrix<f64>, y: &[f64], grid: &[f64]) -> Vec<LassoFit> {
    let s = standardize(x, y);
    let mut beta = vec![0.0; x.ncols()];
    grid.iter()
        .map(|&l| {
            coordinate_descent(&s, l, &mut beta);
            unstandardize(&s, &beta, l)
        })
        .collect()
}

/// Lasso with the penalty chosen by `cv_folds`-fold cross-validated squared error.
pub fn fit_lasso_cv(x: &DMatrix<f64>, y: &[f64], config: &LassoConfig, seed: u64) -> LassoFit {
    if let Some(l) = config.lambda {
        return fit_lasso(x, y, l);
    }
    let n = y.len();
    let grid = lambda_grid(x, y, config.n_lambda);
    let folds = fold_assignment(n, config.cv_folds.min(n), None, seed);
    let mut risk = vec![0.0; grid.len()];
    for f in 0..config.cv_folds.min(n) {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.select_rows(&test);
        for (k, fit) in path(&xt, &yt, &grid).iter().enumerate() {
            risk[k] += fit.predict(&xv).iter().zip(&test).map(|(p, &i)| (p - y[i]).powi(2)).sum::<f64>();
        }
    }
    let best = (0..grid.len()).min_by(|&a, &b| risk[a].total_cmp(&risk[b]).then(a.cmp(&b))).unwrap_or(0);
    fit_lasso(x, y, grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcome::fit_ols;

    fn data() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(40, 3, |i, j| ((i * (j + 2) * 7 + j) % 13) as f64 - 6.0 + 0.1 * (i as f64).sin());
        let y = (0..40).map(|i| 1.0 + 0.5 * x[(i, 0)] - 2.0 * x[(i, 1)] + 0.3 * (i as f64 * 0.7).cos()).collect();
        (x, y)
    }

    #[test]
    fn zero_penalty_is_ols() {
        let (x, y) = data();
        let l = fit_lasso(&x, &y, 0.0);
        let o = fit_ols(&x, &y, None).unwrap();
        assert!((l.intercept - o.coefficients[0]).abs() < 1e-6);
        for (a, b) in l.coefficients.iter().zip(&o.coefficients[1..]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn penalty_above_max_zeroes_slopes() {
        let (x, y) = data();
        let l = fit_lasso(&x, &y, lambda_max(&x, &y) * 1.0001);
        assert!(l.coefficients.iter().all(|&b| b == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((l.intercept - mean).abs() < 1e-12);
    }

    #[test]
    fn univariate_soft_threshold() {
        // x standardized (mean 0, variance 1 with divisor n), y = 1.5 x.
        let xs = [-1.5, -0.5, 0.5, 1.5];
        let sd = (xs.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        let x = DMatrix::from_iterator(4, 1, xs.iter().map(|v| v / sd));
        let y: Vec<f64> = x.iter().map(|v| 1.5 * v).collect();
        let l = fit_lasso(&x, &y, 0.5);
        assert!((l.coefficients[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cv_choice_is_on_grid_and_deterministic() {
        let (x, y) = data();
        let a = fit_lasso_cv(&x, &y, &LassoConfig::default(), 3);
        let b = fit_lasso_cv(&x, &y, &LassoConfig::default(), 3);
        assert_eq!(a, b);
        assert!(lambda_grid(&x, &y, 20).contains(&a.lambda));
    }
}
