use nalgebra::DMatrix;

use super::{DistanceMatrix, MatchResult};

/// Minimum-cost assignment of every row to a distinct column by successive
/// shortest augmenting paths with potentials. Requires `rows <= cols` and
/// finite costs. Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    assert!(n <= m, "assignment needs rows <= cols");
    // 1-based arrays; index 0 is a sentinel column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assigned = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assigned[owner[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Pair matching minimizing total distance. Caliper violations are priced at
/// a penalty larger than any feasible matching, so the number of pairs is
/// maximized first; penalized pairs are then discarded.
pub fn optimal_pair_match(dm: &DistanceMatrix) -> MatchResult {
    let (nt, nc) = (dm.n_treated(), dm.n_control());
    let max_finite = dm.values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if nt == 0 || nc == 0 || !max_finite.is_finite() {
        return MatchResult::from_pairs(dm, Vec::new());
    }
    let penalty = (max_finite + 1.0) * (nt.min(nc) + 1) as f64;
    let priced = dm.values.map(|v| if v.is_finite() { v } else { penalty });
    let pairs: Vec<(usize, usize)> = if nt <= nc {
        min_cost_assignment(&priced).into_iter().enumerate().collect()
    } else {
        min_cost_assignment(&priced.transpose()).into_iter().enumerate().map(|(c, t)| (t, c)).collect()
    };
    let feasible = pairs.into_iter().filter(|&(t, c)| dm.values[(t, c)].is_finite()).collect();
    MatchResult::from_pairs(dm, feasible)
}
