//! Seeded fold assignment and out-of-fold predictions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{LearnerError, LearnerSpec};
use crate::rng::{derive_seed, rng_from_seed};

/// Fold label per unit. Units are shuffled within each stratum and dealt
/// round-robin with a counter that runs across strata, so `k = n` puts every
/// unit in its own fold.
pub fn fold_assignment(n: usize, k: usize, strata: Option<&[bool]>, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let groups: Vec<Vec<usize>> = match strata {
        Some(s) => vec![(0..n).filter(|&i| s[i]).collect(), (0..n).filter(|&i| !s[i]).collect()],
        None => vec![(0..n).collect()],
    };
    let mut folds = vec![0; n];
    let mut counter = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[i] = counter % k;
            counter += 1;
        }
    }
    folds
}

/// Column `j` holds learner `j`'s prediction for each unit from the model
/// trained without that unit's fold. Folds are fitted in parallel with
/// per-fold, per-learner seeds.
pub fn cv_predictions(
    learners: &[LearnerSpec],
    x: &DMatrix<f64>,
    y: &[f64],
    k: usize,
    strata: Option<&[bool]>,
    seed: u64,
) -> Result<DMatrix<f64>, LearnerError> {
    let n = y.len();
    if k < 2 || k > n {
        return Err(LearnerError::InvalidConfig(format!("need 2 <= folds <= n, got {k} folds for {n} units")));
    }
    if x.nrows() != n || strata.is_some_and(|s| s.len() != n) {
        return Err(LearnerError::LengthMismatch);
    }
    let folds = fold_assignment(n, k, strata, derive_seed(seed, &[0]));
    let blocks: Vec<(Vec<usize>, Vec<Vec<f64>>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xv = x.select_rows(&test);
            let preds = learners
                .iter()
                .enumerate()
                .map(|(j, spec)| Ok(spec.fit(&xt, &yt, derive_seed(seed, &[1, f as u64, j as u64]))?.predict(&xv)))
                .collect::<Result<Vec<_>, LearnerError>>()?;
            Ok((test, preds))
        })
        .collect::<Result<_, LearnerError>>()?;
    let mut out = DMatrix::zeros(n, learners.len());
    for (test, preds) in blocks {
        for (j, col) in preds.iter().enumerate() {
            for (pos, &i) in test.iter().enumerate() {
                out[(i, j)] = col[pos];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ForestConfig;

    fn mean_learner() -> LearnerSpec {
        LearnerSpec::Forest(ForestConfig { n_trees: 1, sample_fraction: 1.0, min_leaf: 10_000, ..Default::default() })
    }

    #[test]
    fn folds_are_balanced_and_stratified() {
        let strata: Vec<bool> = (0..23).map(|i| i % 3 == 0).collect();
        let f = fold_assignment(23, 5, Some(&strata), 8);
        for k in 0..5 {
            let size = f.iter().filter(|&&v| v == k).count();
            assert!((4..=5).contains(&size));
            let treated = (0..23).filter(|&i| f[i] == k && strata[i]).count();
            assert!((1..=2).contains(&treated));
        }
    }

    #[test]
    fn leave_one_out_means() {
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let p = cv_predictions(&[mean_learner()], &x, &y, 10, None, 1).unwrap();
        let total: f64 = y.iter().sum();
        for i in 0..10 {
            assert!((p[(i, 0)] - (total - y[i]) / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_means_and_determinism() {
        let y: Vec<f64> = (0..30).map(|i| (i as f64).sqrt()).collect();
        let x = DMatrix::from_fn(30, 2, |i, j| (i + j) as f64);
        let p = cv_predictions(&[mean_learner()], &x, &y, 3, None, 5).unwrap();
        let q = cv_predictions(&[mean_learner()], &x, &y, 3, None, 5).unwrap();
        assert_eq!(p, q);
        let folds = fold_assignment(30, 3, None, derive_seed(5, &[0]));
        for i in 0..30 {
            let others: Vec<f64> = (0..30).filter(|&j| folds[j] != folds[i]).map(|j| y[j]).collect();
            assert!((p[(i, 0)] - others.iter().sum::<f64>() / others.len() as f64).abs() < 1e-12);
        }
    }
}
