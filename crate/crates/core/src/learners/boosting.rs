//! Least-squares gradient boosting with shrinkage.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Tree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        BoostingConfig { n_rounds: 200, learning_rate: 0.05, max_depth: 2, min_leaf: 5 }
    }
}

impl BoostingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_rounds == 0 {
            return Err("boosting needs n_rounds >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err("boosting learning_rate must lie in (0, 1]".into());
        }
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err("boosting max_depth and min_leaf must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosting {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    /// Training mean squared error after each round.
    pub train_loss: Vec<f64>,
}

pub fn fit_boosting(x: &DMatrix<f64>, y: &[f64], config: &BoostingConfig) -> Boosting {
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base; n];
    let tree_config = TreeConfig { max_depth: config.max_depth, min_leaf: config.min_leaf, mtry: None };
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut train_loss = Vec::with_capacity(config.n_rounds);
    for _ in 0..config.n_rounds {
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let tree = fit_tree(x, &resid, &tree_config);
        for (r, f) in fitted.iter_mut().enumerate() {
            *f += config.learning_rate * tree.predict_row(x, r);
        }
        train_loss.push(y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Boosting { base, learning_rate: config.learning_rate, trees, train_loss }
}

impl Boosting {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(200, 2, |i, j| ((i * (j + 7) * 13) % 101) as f64 / 50.0 - 1.0);
        let y = (0..200).map(|i| 2.0 * x[(i, 0)] - x[(i, 1)]).collect();
        (x, y)
    }

    #[test]
    fn one_full_step_equals_tree_on_centered_response() {
        let (x, y) = linear();
        let cfg = BoostingConfig { n_rounds: 1, learning_rate: 1.0, max_depth: 32, min_leaf: 5 };
        let b = fit_boosting(&x, &y, &cfg);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let t = fit_tree(&x, &resid, &TreeConfig { max_depth: 32, min_leaf: 5, mtry: None });
        for (a, r) in b.predict(&x).iter().zip(t.predict(&x)) {
            assert!((a - (mean + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_monotone_and_small_on_linear_truth() {
        let (x, y) = linear();
        let b = fit_boosting(&x, &y, &BoostingConfig { n_rounds: 400, learning_rate: 0.1, max_depth: 2, min_leaf: 5 });
        assert!(b.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let mean = y.iter().sum::<f64>() / 200.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        assert!(*b.train_loss.last().unwrap() < 0.05 * var);
    }
}
