use nalgebra::DMatrix;

use super::{MatchResult, MatchingError};
use crate::balance::{balance_table, BalanceTable, DenominatorPolicy};
use crate::data::Dataset;
use crate::estimate::{EffectEstimate, Estimand};
use crate::outcome::{fit_ols, varying_columns};
use crate::stats;

/// Mean of within-pair outcome differences, with `sd(diffs) / sqrt(pairs)`
/// as the standard error. `y` is indexed by dataset row.
pub fn matched_pair_estimate(result: &MatchResult, y: &[f64]) -> Result<EffectEstimate, MatchingError> {
    if result.len() < 2 {
        return Err(MatchingError::TooFewPairs(result.len()));
    }
    let diffs: Vec<f64> = result.pairs.iter().map(|p| y[p.treated_row] - y[p.control_row]).collect();
    let se = stats::sd(&diffs) / (diffs.len() as f64).sqrt();
    Ok(EffectEstimate::normal("match", Estimand::Att, stats::mean(&diffs), se, 2 * diffs.len()))
}

/// Regression of `y` on `(z, X)` within the matched sample; returns the `z`
/// coefficient with its HC2 standard error. Covariates constant within the
/// matched sample are dropped.
pub fn bias_corrected_estimate(result: &MatchResult, d: &Dataset, outcome: &str) -> Result<EffectEstimate, MatchingError> {
    let y = d.outcome(outcome)?;
    let rows: Vec<usize> = result.pairs.iter().flat_map(|p| [p.treated_row, p.control_row]).collect();
    let x = d.design(&d.covariate_indices(true));
    let keep = varying_columns(&x, &rows);
    if rows.len() <= keep.len() + 3 {
        return Err(MatchingError::TooFewPairs(result.len()));
    }
    let design = DMatrix::from_fn(rows.len(), keep.len() + 1, |i, j| {
        if j == 0 {
            d.units()[rows[i]].z_f64()
        } else {
            x[(rows[i], keep[j - 1])]
        }
    });
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let model = fit_ols(&design, &ys, None)?;
    Ok(EffectEstimate::normal("match+ra", Estimand::Att, model.coefficients[1], model.se(1), rows.len()))
}

/// Balance table of the matched sample. Denominators come from the full
/// sample so the table is comparable with the unmatched one.
pub fn post_match_balance(d: &Dataset, result: &MatchResult, policy: DenominatorPolicy) -> Result<BalanceTable, MatchingError> {
    let mut w = vec![0.0; d.len()];
    for p in &result.pairs {
        w[p.treated_row] = 1.0;
        w[p.control_row] = 1.0;
    }
    Ok(balance_table(d, Some(&w), policy)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, CovariateSchema, Unit};
    use crate::matching::MatchedPair;
    use crate::outcome::OutcomeError;

    fn pairs(list: &[(usize, usize)]) -> MatchResult {
        MatchResult {
            pairs: list
                .iter()
                .map(|&(t, c)| MatchedPair { treated_row: t, control_row: c, treated_id: t as i64, control_id: c as i64, distance: 0.0 })
                .collect(),
            unmatched_treated: vec![],
            objective: 0.0,
            hit_limit: false,
        }
    }

    fn dataset(rows: &[(bool, [f64; 2], f64)]) -> Dataset {
        let units = rows
            .iter()
            .enumerate()
            .map(|(i, (z, x, y))| Unit { id: i as i64, arm: Arm::Nrs, z: *z, y: vec![*y], x: x.to_vec() })
            .collect();
        Dataset::new(vec![CovariateSchema::continuous("x1"), CovariateSchema::continuous("x2")], vec!["y".into()], units).unwrap()
    }

    #[test]
    fn pair_differences() {
        let y = [3.0, 1.0, 5.0, 2.0];
        let est = matched_pair_estimate(&pairs(&[(0, 1), (2, 3)]), &y).unwrap();
        assert!((est.tau - 2.5).abs() < 1e-12);
        let same = [1.0, 1.0, 4.0, 4.0];
        let est = matched_pair_estimate(&pairs(&[(0, 1), (2, 3)]), &same).unwrap();
        assert_eq!((est.tau, est.se), (0.0, 0.0));
        assert!(matches!(matched_pair_estimate(&pairs(&[(0, 1)]), &y), Err(MatchingError::TooFewPairs(1))));
    }

    #[test]
    fn balanced_sample_regression_equals_pair_mean() {
        // Treated and control x means coincide, so z is orthogonal to the centered covariates.
        let xs = [[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [3.0, 0.5], [4.0, 1.5]];
        let mut rows = Vec::new();
        for (k, x) in xs.iter().enumerate() {
            rows.push((true, *x, 2.0 + x[0] + (k as f64).sin()));
            rows.push((false, *x, x[0] * 0.5 + (k as f64 * 2.0).cos()));
        }
        let d = dataset(&rows);
        let m = pairs(&(0..5).map(|k| (2 * k, 2 * k + 1)).collect::<Vec<_>>());
        let a = matched_pair_estimate(&m, &d.outcome("y").unwrap()).unwrap();
        let b = bias_corrected_estimate(&m, &d, "y").unwrap();
        assert!((a.tau - b.tau).abs() < 1e-8);
    }

    #[test]
    fn residual_imbalance_removed_on_noiseless_data() {
        let tx = [1.0, 2.0, 3.0, 4.0];
        let cx = [0.0, 0.5, 2.5, 3.0];
        let mut rows = Vec::new();
        for k in 0..4 {
            let other = [(k * 7 % 5) as f64, (k * 3 % 4) as f64];
            rows.push((true, [tx[k], other[0]], 2.0 + 3.0 * tx[k]));
            rows.push((false, [cx[k], other[1]], 3.0 * cx[k]));
        }
        let d = dataset(&rows);
        let m = pairs(&(0..4).map(|k| (2 * k, 2 * k + 1)).collect::<Vec<_>>());
        let est = bias_corrected_estimate(&m, &d, "y").unwrap();
        assert!((est.tau - 2.0).abs() < 1e-9);
        assert!(matched_pair_estimate(&m, &d.outcome("y").unwrap()).unwrap().tau > 3.0);
    }

    #[test]
    fn treatment_collinear_with_covariate() {
        let mut rows = Vec::new();
        for k in 0..4 {
            rows.push((true, [1.0, k as f64], k as f64));
            rows.push((false, [0.0, k as f64 + 0.5], 0.0));
        }
        let d = dataset(&rows);
        let m = pairs(&(0..4).map(|k| (2 * k, 2 * k + 1)).collect::<Vec<_>>());
        assert!(matches!(bias_corrected_estimate(&m, &d, "y"), Err(MatchingError::Outcome(OutcomeError::RankDeficient))));
    }
}
