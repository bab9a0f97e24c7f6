//! Random forest regression.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeConfig};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features per split; `None` uses `ceil(p / 3)`.
    pub mtry: Option<usize>,
    /// Share of rows drawn, without replacement, for each tree.
    pub sample_fraction: f64,
    pub min_leaf: usize,
    pub max_depth: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 200, mtry: None, sample_fraction: 0.8, min_leaf: 5, max_depth: 32 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_trees == 0 {
            return Err("forest needs n_trees >= 1".into());
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err("forest sample_fraction must lie in (0, 1]".into());
        }
        if self.mtry == Some(0) || self.min_leaf == 0 {
            return Err("forest mtry and min_leaf must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

/// Trees are grown in parallel, each from its own seed derived from `seed`
/// and the tree index, so the fit does not depend on scheduling.
pub fn fit_random_forest(x: &DMatrix<f64>, y: &[f64], config: &ForestConfig, seed: u64) -> Forest {
    let (n, p) = x.shape();
    let mtry = config.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1));
    let size = ((config.sample_fraction * n as f64).ceil() as usize).clamp(1.min(n), n);
    let tree_config = TreeConfig { max_depth: config.max_depth, min_leaf: config.min_leaf, mtry: Some(mtry) };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, &[t as u64]));
            let mut rows = if size == n { (0..n).collect() } else { sample(&mut rng, n, size).into_vec() };
            rows.sort_unstable();
            Tree::fit_rows(x, y, &rows, &tree_config, Some(&mut rng))
        })
        .collect();
    Forest { trees }
}

impl Forest {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let k = self.trees.len() as f64;
        (0..x.nrows()).map(|r| self.trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>() / k).collect()
    }
}
