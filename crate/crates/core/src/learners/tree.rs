//! CART regression trees.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub mtry: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 32, min_leaf: 5, mtry: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    config: TreeConfig,
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize, rng: &mut Option<&mut Rng>) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mean = sum / n as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.config.max_depth || n < 2 * self.config.min_leaf.max(1) {
            return id;
        }
        let Some(best) = self.best_split(rows, sum, rng) else { return id };
        let mut k = 0;
        for i in 0..n {
            if self.x[(rows[i], best.feature)] <= best.threshold {
                rows.swap(i, k);
                k += 1;
            }
        }
        let (l, r) = rows.split_at_mut(k);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    fn best_split(&self, rows: &[usize], sum: f64, rng: &mut Option<&mut Rng>) -> Option<Best> {
        let p = self.x.ncols();
        let n = rows.len();
        let features: Vec<usize> = match (self.config.mtry, rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < p => {
                let mut f = sample(rng, p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let base = sum * sum / n as f64;
        let min_leaf = self.config.min_leaf.max(1);
        let mut best: Option<Best> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for f in features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[(r, f)], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += pairs[i].1;
                let nl = i + 1;
                if nl < min_leaf || n - nl < min_leaf || pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - base;
                if gain > best.as_ref().map_or(1e-12 * base.abs().max(1.0), |b| b.gain + 1e-12 * b.gain.abs()) {
                    best = Some(Best { gain, feature: f, threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0) });
                }
            }
        }
        best
    }
}

impl Tree {
    /// Fits on the given rows of `x`. `rng` drives feature subsampling when
    /// `mtry` is set.
    pub fn fit_rows(x: &DMatrix<f64>, y: &[f64], rows: &[usize], config: &TreeConfig, mut rng: Option<&mut Rng>) -> Tree {
        let mut b = Builder { x, y, config: *config, nodes: Vec::new() };
        let mut rows = rows.to_vec();
        if !rows.is_empty() {
            b.build(&mut rows, 0, &mut rng);
        } else {
            b.nodes.push(Node::Leaf(0.0));
        }
        Tree { nodes: b.nodes }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, r: usize) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[(r, feature)] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|r| self.predict_row(x, r)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Greedy squared-error CART on all rows and features.
pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], config: &TreeConfig) -> Tree {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    Tree::fit_rows(x, y, &rows, &TreeConfig { mtry: None, ..*config }, None)
}
