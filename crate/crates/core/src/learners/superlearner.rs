//! Convex stacking of cross-validated learner predictions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::cv_predictions;
use super::{FittedLearner, LearnerError, LearnerSpec};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerFit {
    /// On the probability simplex.
    pub weights: Vec<f64>,
    /// Cross-validated mean squared error of each learner alone.
    pub cv_risk: Vec<f64>,
    /// Cross-validated mean squared error of the weighted combination.
    pub risk: f64,
    pub folds: usize,
}

/// Minimizes `|y - P w|^2 / n` over the simplex by exponentiated gradient
/// with backtracking, stopping when the Frank-Wolfe duality gap is below
/// `1e-12` relative to the scale of `y`.
pub fn super_learner_weights(p: &DMatrix<f64>, y: &[f64]) -> SuperLearnerFit {
    let (n, l) = p.shape();
    let nf = n as f64;
    let yv = DVector::from_column_slice(y);
    let q = p.tr_mul(p) / nf;
    let b = p.tr_mul(&yv) / nf;
    let c = yv.dot(&yv) / nf;
    let risk = |w: &DVector<f64>| (w.dot(&(&q * w)) - 2.0 * b.dot(w) + c).max(0.0);
    let cv_risk: Vec<f64> = (0..l).map(|j| (q[(j, j)] - 2.0 * b[j] + c).max(0.0)).collect();

    let mut w = DVector::from_element(l, 1.0 / l as f64);
    let tol = 1e-12 * c.max(1e-300);
    let mut eta = 1.0 / q.diagonal().amax().max(1e-300);
    let mut f = risk(&w);
    for _ in 0..1_000_000 {
        let g = (&q * &w - &b) * 2.0;
        let gmin = g.min();
        if g.dot(&w) - gmin <= tol {
            break;
        }
        let mut accepted = false;
        while eta > 1e-300 {
            let mut cand = DVector::from_fn(l, |j, _| w[j] * (-eta * (g[j] - gmin)).exp());
            let s = cand.sum();
            cand /= s;
            let fc = risk(&cand);
            if fc <= f {
                w = cand;
                f = fc;
                eta *= 1.5;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let s = w.sum();
    let weights: Vec<f64> = w.iter().map(|v| v / s).collect();
    let wv = DVector::from_column_slice(&weights);
    SuperLearnerFit { risk: risk(&wv), weights, cv_risk, folds: 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperLearnerConfig {
    pub learners: Vec<LearnerSpec>,
    pub folds: usize,
}

impl Default for SuperLearnerConfig {
    fn default() -> Self {
        SuperLearnerConfig {
            learners: vec![
                LearnerSpec::Forest(Default::default()),
                LearnerSpec::Lasso(Default::default()),
                LearnerSpec::Boosting(Default::default()),
            ],
            folds: 10,
        }
    }
}

/// Weighted combination of full-data learner fits. Learners with zero weight
/// are not refitted.
#[derive(Debug, Clone)]
pub struct SuperLearner {
    pub fit: SuperLearnerFit,
    models: Vec<Option<FittedLearner>>,
}

impl SuperLearner {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        for (w, m) in self.fit.weights.iter().zip(&self.models) {
            if let Some(m) = m {
                for (o, v) in out.iter_mut().zip(m.predict(x)) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

pub fn fit_super_learner(
    x: &DMatrix<f64>,
    y: &[f64],
    strata: Option<&[bool]>,
    config: &SuperLearnerConfig,
    seed: u64,
) -> Result<SuperLearner, LearnerError> {
    if config.learners.is_empty() {
        return Err(LearnerError::InvalidConfig("super learner needs at least one learner".into()));
    }
    for spec in &config.learners {
        spec.validate()?;
    }
    let p = cv_predictions(&config.learners, x, y, config.folds, strata, derive_seed(seed, &[0]))?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::Degenerate("non-finite cross-validated prediction".into()));
    }
    let mut fit = super_learner_weights(&p, y);
    fit.folds = config.folds;
    let models = config
        .learners
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            if fit.weights[j] > 0.0 {
                spec.fit(x, y, derive_seed(seed, &[1, j as u64])).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(SuperLearner { fit, models })
}
