use serde::{Deserialize, Serialize};

use super::{DistanceMatrix, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyOrder {
    #[default]
    DataOrder,
    /// Highest propensity score first; falls back to data order when the
    /// distance matrix carries no scores.
    LargestPscoreFirst,
}

/// Each treated unit, in turn, takes the nearest remaining control with a
/// finite distance. Ties go to the lowest control id.
pub fn greedy_nn_match(dm: &DistanceMatrix, order: GreedyOrder) -> MatchResult {
    let mut sequence: Vec<usize> = (0..dm.n_treated()).collect();
    if let (GreedyOrder::LargestPscoreFirst, Some(e)) = (order, &dm.treated_scores) {
        sequence.sort_by(|&a, &b| e[b].total_cmp(&e[a]).then(dm.treated_ids[a].cmp(&dm.treated_ids[b])));
    }
    let mut used = vec![false; dm.n_control()];
    let mut pairs = Vec::new();
    for t in sequence {
        let mut best: Option<usize> = None;
        for c in 0..dm.n_control() {
            let v = dm.values[(t, c)];
            if used[c] || !v.is_finite() {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => v < dm.values[(t, b)] || (v == dm.values[(t, b)] && dm.control_ids[c] < dm.control_ids[b]),
            };
            if better {
                best = Some(c);
            }
        }
        if let Some(c) = best {
            used[c] = true;
            pairs.push((t, c));
        }
    }
    MatchResult::from_pairs(dm, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn abs_diff(t: &[f64], c: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_values(DMatrix::from_fn(t.len(), c.len(), |a, b| (t[a] - c[b]).abs()))
    }

    #[test]
    fn hand_enumerated_example() {
        let dm = abs_diff(&[0.8, 0.2], &[0.25, 0.3, 0.9]);
        let m = greedy_nn_match(&dm, GreedyOrder::DataOrder);
        let pairs: Vec<(i64, i64)> = m.pairs.iter().map(|p| (p.treated_id, p.control_id)).collect();
        // Controls are numbered 2, 3, 4.
        assert_eq!(pairs, vec![(0, 4), (1, 2)]);
        assert!((m.objective - 0.15).abs() < 1e-12);
    }

    #[test]
    fn order_matters_and_scores_reorder() {
        let t = [0.5, 0.45];
        let mut dm = abs_diff(&t, &[0.45, 0.0]);
        let m = greedy_nn_match(&dm, GreedyOrder::DataOrder);
        assert!((m.objective - 0.5).abs() < 1e-12);
        dm.treated_scores = Some(vec![0.1, 0.9]);
        let m = greedy_nn_match(&dm, GreedyOrder::LargestPscoreFirst);
        // Unit 1 goes first and takes the exact match.
        assert_eq!(m.pairs.iter().find(|p| p.treated_id == 1).unwrap().control_id, 2);
    }

    #[test]
    fn ties_go_to_lowest_control_id() {
        let dm = abs_diff(&[0.5], &[0.75, 0.25]);
        let m = greedy_nn_match(&dm, GreedyOrder::DataOrder);
        assert_eq!(m.pairs[0].control_id, 1);
    }

    #[test]
    fn degenerate_inputs() {
        let m = greedy_nn_match(&abs_diff(&[0.3], &[0.7]), GreedyOrder::DataOrder);
        assert_eq!(m.len(), 1);
        let dm = DistanceMatrix::from_values(DMatrix::from_element(2, 3, f64::INFINITY));
        let m = greedy_nn_match(&dm, GreedyOrder::DataOrder);
        assert!(m.is_empty());
        assert_eq!(m.unmatched_treated, vec![0, 1]);
    }
}
