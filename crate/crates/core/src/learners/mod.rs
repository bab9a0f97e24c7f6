//! Regression learners, Super Learner stacking and TMLE.

mod boosting;
mod cv;
mod forest;
mod lasso;
mod superlearner;
mod tmle;
mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::estimate::{EffectEstimate, Estimand};
use crate::linalg::solve_spd;
use crate::propensity::PropensityError;
use crate::weighting::{propensity_scores, WeightingError};

pub use boosting::{fit_boosting, Boosting, BoostingConfig};
pub use cv::{cv_predictions, fold_assignment};
pub use forest::{fit_random_forest, Forest, ForestConfig};
pub use lasso::{fit_lasso, fit_lasso_cv, lambda_grid, lambda_max, LassoConfig, LassoFit};
pub use superlearner::{fit_super_learner, super_learner_weights, SuperLearner, SuperLearnerConfig, SuperLearnerFit};
pub use tmle::{tmle, TmleResult};
pub use tree::{fit_tree, Tree, TreeConfig};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Forest(ForestConfig),
    Lasso(LassoConfig),
    Boosting(BoostingConfig),
    /// Least squares with a vanishing ridge, so collinear columns are harmless.
    Linear,
}

impl LearnerSpec {
    /// Parses `forest`, `lasso`, `boost`/`boosting` or `linear` with default settings.
    pub fn from_name(name: &str) -> Result<Self, LearnerError> {
        match name.trim() {
            "forest" | "rf" => Ok(LearnerSpec::Forest(Default::default())),
            "lasso" => Ok(LearnerSpec::Lasso(Default::default())),
            "boost" | "boosting" | "gbm" => Ok(LearnerSpec::Boosting(Default::default())),
            "linear" | "ols" => Ok(LearnerSpec::Linear),
            other => Err(LearnerError::InvalidConfig(format!("unknown learner `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        match self {
            LearnerSpec::Forest(c) => c.validate(),
            LearnerSpec::Lasso(c) => c.validate(),
            LearnerSpec::Boosting(c) => c.validate(),
            LearnerSpec::Linear => Ok(()),
        }
        .map_err(LearnerError::InvalidConfig)
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<FittedLearner, LearnerError> {
        if x.nrows() != y.len() {
            return Err(LearnerError::LengthMismatch);
        }
        if y.is_empty() {
            return Err(LearnerError::Degenerate("no training rows".into()));
        }
        Ok(match self {
            LearnerSpec::Forest(c) => FittedLearner::Forest(fit_random_forest(x, y, c, seed)),
            LearnerSpec::Lasso(c) => FittedLearner::Lasso(fit_lasso_cv(x, y, c, seed)),
            LearnerSpec::Boosting(c) => FittedLearner::Boosting(fit_boosting(x, y, c)),
            LearnerSpec::Linear => FittedLearner::Linear(fit_linear(x, y)?),
        })
    }
}

#[derive(Debug, Clone)]
pub enum FittedLearner {
    Forest(Forest),
    Lasso(LassoFit),
    Boosting(Boosting),
    Linear(LassoFit),
}

impl FittedLearner {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            FittedLearner::Forest(m) => m.predict(x),
            FittedLearner::Lasso(m) | FittedLearner::Linear(m) => m.predict(x),
            FittedLearner::Boosting(m) => m.predict(x),
        }
    }
}

fn fit_linear(x: &DMatrix<f64>, y: &[f64]) -> Result<LassoFit, LearnerError> {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let yc = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut g = xc.tr_mul(&xc);
    let ridge = 1e-10 * (g.trace() / p.max(1) as f64).max(1e-12);
    for j in 0..p {
        g[(j, j)] += ridge;
    }
    let beta = solve_spd(&g, &xc.tr_mul(&yc)).ok_or_else(|| LearnerError::Degenerate("singular linear design".into()))?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(LassoFit { intercept, coefficients, lambda: 0.0 })
}

/// Super Learner outcome model on `(z, X)` followed by TMLE, with a
/// main-effects logistic propensity model.
pub fn sl_tmle(
    d: &Dataset,
    outcome: &str,
    estimand: Estimand,
    config: &SuperLearnerConfig,
    seed: u64,
) -> Result<(EffectEstimate, TmleResult), LearnerError> {
    let y = d.outcome(outcome)?;
    let z = d.treated();
    let e = propensity_scores(d)?;
    let x = d.design(&d.covariate_indices(true));
    let with_z = |v: Option<f64>| DMatrix::from_fn(d.len(), x.ncols() + 1, |i, j| if j == 0 { v.unwrap_or(if z[i] { 1.0 } else { 0.0 }) } else { x[(i, j - 1)] });
    let sl = fit_super_learner(&with_z(None), &y, Some(&z), config, seed)?;
    let q1 = sl.predict(&with_z(Some(1.0)));
    let q0 = sl.predict(&with_z(Some(0.0)));
    let r = tmle(&y, &z, &q1, &q0, &e, estimand)?;
    let est = EffectEstimate { method_id: "sl_tmle".into(), estimand, tau: r.psi, se: r.se, ci: r.ci, n_used: d.len() };
    Ok((est, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_round_trip() {
        let specs = vec![
            LearnerSpec::Forest(ForestConfig { n_trees: 7, ..Default::default() }),
            LearnerSpec::Lasso(LassoConfig { lambda: Some(0.1), ..Default::default() }),
            LearnerSpec::Boosting(Default::default()),
            LearnerSpec::Linear,
        ];
        let s = serde_json::to_string(&specs).unwrap();
        let back: Vec<LearnerSpec> = serde_json::from_str(&s).unwrap();
        assert_eq!(specs, back);
        let partial: LearnerSpec = serde_json::from_str(r#"{"kind":"forest","n_trees":3}"#).unwrap();
        assert_eq!(partial, LearnerSpec::Forest(ForestConfig { n_trees: 3, ..Default::default() }));
    }

    #[test]
    fn validation_ranges() {
        assert!(LearnerSpec::Forest(ForestConfig { n_trees: 0, ..Default::default() }).validate().is_err());
        assert!(LearnerSpec::Boosting(BoostingConfig { learning_rate: 1.5, ..Default::default() }).validate().is_err());
        assert!(LearnerSpec::Lasso(LassoConfig { lambda: Some(-1.0), ..Default::default() }).validate().is_err());
        assert!(LearnerSpec::from_name("bart").is_err());
    }

    #[test]
    fn linear_learner_handles_duplicate_columns() {
        let x = DMatrix::from_fn(20, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..20).map(|i| 1.0 + 2.0 * i as f64).collect();
        let m = LearnerSpec::Linear.fit(&x, &y, 0).unwrap();
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() < 1e-6);
        }
    }
}
