use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::distance::whiten;
use super::lp::{self, LinearProgram, LpStatus, RowKind};
use super::{optimal_pair_match, DistanceMatrix, MatchResult, MatchingError};
use crate::balance::{denominator, DenominatorPolicy};
use crate::data::{CovariateRole, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceConstraint {
    /// Expanded column name.
    pub covariate: String,
    pub max_abs_std_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CardinalityConfig {
    /// Threshold used by [`default_constraints`].
    pub threshold: f64,
    /// Branch-and-bound node budget. Reaching it returns the incumbent.
    pub max_nodes: usize,
    /// Relative optimality gap at which the search stops; zero proves
    /// optimality.
    pub gap: f64,
    /// Optional wall-clock budget. Off by default because it makes results
    /// depend on machine speed.
    pub time_limit_secs: Option<f64>,
}

impl Default for CardinalityConfig {
    fn default() -> Self {
        CardinalityConfig { threshold: 0.1, max_nodes: 20_000, gap: 0.0, time_limit_secs: None }
    }
}

/// One constraint per non-center covariate column.
pub fn default_constraints(d: &Dataset, threshold: f64) -> Vec<BalanceConstraint> {
    d.columns()
        .iter()
        .filter(|c| c.role == CovariateRole::Covariate)
        .map(|c| BalanceConstraint { covariate: c.name.clone(), max_abs_std_diff: threshold })
        .collect()
}

/// Units chosen by [`select_balanced`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub treated: Vec<bool>,
    pub control: Vec<bool>,
    pub count: usize,
    pub nodes: usize,
    pub hit_limit: bool,
}

struct Problem {
    lp: LinearProgram,
    nt: usize,
    s_t: DMatrix<f64>,
    s_c: DMatrix<f64>,
    thresholds: Vec<f64>,
}

impl Problem {
    fn new(s_t: &DMatrix<f64>, s_c: &DMatrix<f64>, thresholds: &[f64]) -> Self {
        let (nt, nc, k) = (s_t.nrows(), s_c.nrows(), thresholds.len());
        let n = nt + nc;
        let mut rows = Vec::with_capacity(2 * k + 1);
        for (j, &thr) in thresholds.iter().enumerate() {
            // sum_t s - sum_c s <= thr * m and -(sum_t s - sum_c s) <= thr * m, with m = sum_t.
            let mut upper = vec![0.0; n];
            let mut lower = vec![0.0; n];
            for i in 0..nt {
                upper[i] = s_t[(i, j)] - thr;
                lower[i] = -s_t[(i, j)] - thr;
            }
            for i in 0..nc {
                upper[nt + i] = -s_c[(i, j)];
                lower[nt + i] = s_c[(i, j)];
            }
            rows.push(upper);
            rows.push(lower);
        }
        rows.push((0..n).map(|i| if i < nt { 1.0 } else { -1.0 }).collect());
        let mut kinds = vec![RowKind::Le; 2 * k];
        kinds.push(RowKind::Eq);
        let lp = LinearProgram {
            objective: (0..n).map(|i| if i < nt { 1.0 } else { 0.0 }).collect(),
            rhs: vec![0.0; rows.len()],
            rows,
            kinds,
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        };
        Problem { lp, nt, s_t: s_t.clone(), s_c: s_c.clone(), thresholds: thresholds.to_vec() }
    }

    fn solve(&self, fixed: &[(usize, bool)]) -> Option<(Vec<f64>, f64)> {
        let mut lp = self.lp.clone();
        for &(j, one) in fixed {
            let v = if one { 1.0 } else { 0.0 };
            lp.lower[j] = v;
            lp.upper[j] = v;
        }
        match lp::solve(&lp) {
            LpStatus::Optimal { x, value } => Some((x, value)),
            _ => None,
        }
    }

    /// Total amount by which the selection's column sums exceed their bounds,
    /// with `m` the smaller group size.
    fn violation(&self, diff: &[f64], m: usize) -> f64 {
        diff.iter().zip(&self.thresholds).map(|(d, t)| (d.abs() - t * m as f64).max(0.0)).sum()
    }

    /// Greedily drops units from a 0/1 selection until it is feasible: the
    /// larger group loses its worst unit first, and once the groups are equal
    /// the unit whose removal most reduces the violation goes. Terminates
    /// because the empty selection is feasible.
    fn repair(&self, mut sel: Vec<bool>) -> Vec<bool> {
        let nt = self.nt;
        let k = self.thresholds.len();
        let mut diff = vec![0.0; k];
        for (i, &on) in sel.iter().enumerate() {
            if on {
                for (j, d) in diff.iter_mut().enumerate() {
                    *d += self.signed(i, j);
                }
            }
        }
        let mut mt = sel[..nt].iter().filter(|&&b| b).count();
        let mut mc = sel[nt..].iter().filter(|&&b| b).count();
        let mut trial = vec![0.0; k];
        loop {
            if mt == mc && self.violation(&diff, mt) <= 1e-9 * (mt.max(1) as f64) {
                break;
            }
            let from_treated = mt > mc || (mt == mc && mt > 0);
            let range = if from_treated { 0..nt } else { nt..sel.len() };
            let m_after = if from_treated { (mt - 1).min(mc) } else { mt.min(mc - 1) };
            let mut best: Option<(f64, usize)> = None;
            for i in range.filter(|&i| sel[i]) {
                for j in 0..k {
                    trial[j] = diff[j] - self.signed(i, j);
                }
                let v = self.violation(&trial, m_after);
                if best.is_none_or(|(bv, _)| v < bv) {
                    best = Some((v, i));
                }
            }
            let Some((_, i)) = best else { break };
            sel[i] = false;
            for (j, d) in diff.iter_mut().enumerate() {
                *d -= self.signed(i, j);
            }
            if from_treated {
                mt -= 1;
            } else {
                mc -= 1;
            }
        }
        self.extend(sel, diff, mt)
    }

    /// Adds treated-control pairs to a feasible selection while some pair
    /// keeps it feasible, taking the pair with the smallest total imbalance.
    fn extend(&self, mut sel: Vec<bool>, mut diff: Vec<f64>, mut m: usize) -> Vec<bool> {
        let nt = self.nt;
        let k = self.thresholds.len();
        let tol = |m: usize| 1e-9 * (m.max(1) as f64);
        loop {
            let free_t: Vec<usize> = (0..nt).filter(|&i| !sel[i]).collect();
            let free_c: Vec<usize> = (nt..sel.len()).filter(|&i| !sel[i]).collect();
            let mut best: Option<(f64, usize, usize)> = None;
            let mut after_t = vec![0.0; k];
            for &i in &free_t {
                for j in 0..k {
                    after_t[j] = diff[j] + self.signed(i, j);
                }
                for &c in &free_c {
                    let mut total = 0.0;
                    let mut ok = true;
                    for j in 0..k {
                        let d = after_t[j] + self.signed(c, j);
                        if d.abs() > self.thresholds[j] * (m + 1) as f64 + tol(m + 1) {
                            ok = false;
                            break;
                        }
                        total += d.abs();
                    }
                    if ok && best.is_none_or(|(b, _, _)| total < b) {
                        best = Some((total, i, c));
                    }
                }
            }
            let Some((_, i, c)) = best else { return sel };
            for (j, d) in diff.iter_mut().enumerate() {
                *d += self.signed(i, j) + self.signed(c, j);
            }
            sel[i] = true;
            sel[c] = true;
            m += 1;
        }
    }

    /// Contribution of unit `i` to the treated-minus-control sum of column `j`.
    fn signed(&self, i: usize, j: usize) -> f64 {
        if i < self.nt {
            self.s_t[(i, j)]
        } else {
            -self.s_c[(i - self.nt, j)]
        }
    }

    /// Exact check of a 0/1 selection against the balance constraints.
    fn feasible(&self, sel: &[bool]) -> bool {
        let (t, c) = sel.split_at(self.nt);
        let m = t.iter().filter(|&&b| b).count();
        if m != c.iter().filter(|&&b| b).count() {
            return false;
        }
        let tol = 1e-9 * (m.max(1) as f64);
        self.thresholds.iter().enumerate().all(|(j, &thr)| {
            let st: f64 = (0..t.len()).filter(|&i| t[i]).map(|i| self.s_t[(i, j)]).sum();
            let sc: f64 = (0..c.len()).filter(|&i| c[i]).map(|i| self.s_c[(i, j)]).sum();
            (st - sc).abs() <= thr * m as f64 + tol
        })
    }
}

fn is_integral(v: f64) -> bool {
    (v - v.round()).abs() < 1e-6
}

#[derive(PartialEq, Eq)]
struct Node {
    bound: i64,
    depth: usize,
    seq: u64,
    fixed: Vec<(usize, bool)>,
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.cmp(&other.bound).then(self.depth.cmp(&other.depth)).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Largest equal-size subsets of treated and control rows whose standardized
/// column sums satisfy `|sum_t s_j - sum_c s_j| <= thresholds[j] * m`.
///
/// Solved by best-first branch and bound over the LP relaxation. Incumbents
/// come from rounding each node's relaxation and greedily dropping units
/// until the rounded selection is feasible.
pub fn select_balanced(
    s_t: &DMatrix<f64>,
    s_c: &DMatrix<f64>,
    thresholds: &[f64],
    max_nodes: usize,
    gap: f64,
    time_limit: Option<Duration>,
) -> Selection {
    let problem = Problem::new(s_t, s_c, thresholds);
    let (nt, nc) = (s_t.nrows(), s_c.nrows());
    let n = nt + nc;
    let start = Instant::now();
    let mut best_count = 0usize;
    let mut best_sel = vec![false; n];
    let mut nodes = 0usize;
    let mut hit_limit = false;

    let Some((root_x, root_value)) = problem.solve(&[]) else {
        return Selection { treated: vec![false; nt], control: vec![false; nc], count: 0, nodes: 1, hit_limit: false };
    };
    nodes += 1;
    let root_bound = (root_value + 1e-6).floor() as i64;
    let consider = |x: &[f64], best_count: &mut usize, best_sel: &mut Vec<bool>| {
        let sel = problem.repair(x.iter().map(|&v| v > 0.5).collect());
        let count = sel[..nt].iter().filter(|&&b| b).count();
        if count > *best_count {
            *best_count = count;
            *best_sel = sel;
        }
    };
    consider(&root_x, &mut best_count, &mut best_sel);

    let mut heap = BinaryHeap::new();
    // A node is worth exploring only if its bound beats the incumbent by
    // more than the allowed gap.
    let open = |bound: i64, best: usize| bound > best as i64 && (best as f64) < (1.0 - gap) * bound as f64;
    let mut seq = 0u64;
    if open(root_bound, best_count) {
        heap.push(Node { bound: root_bound, depth: 0, seq, fixed: Vec::new() });
    }
    while let Some(node) = heap.pop() {
        if !open(node.bound, best_count) {
            break;
        }
        if nodes >= max_nodes || time_limit.is_some_and(|l| start.elapsed() > l) {
            hit_limit = true;
            break;
        }
        nodes += 1;
        let Some((x, value)) = problem.solve(&node.fixed) else { continue };
        let bound = (value + 1e-6).floor() as i64;
        if !open(bound, best_count) {
            continue;
        }
        if x.iter().all(|&v| is_integral(v)) {
            let sel: Vec<bool> = x.iter().map(|&v| v > 0.5).collect();
            if problem.feasible(&sel) {
                best_count = sel[..nt].iter().filter(|&&b| b).count();
                best_sel = sel;
                continue;
            }
        }
        consider(&x, &mut best_count, &mut best_sel);
        if !open(bound, best_count) {
            continue;
        }
        let is_fixed = |j: usize| node.fixed.iter().any(|&(f, _)| f == j);
        let branch = (0..n)
            .filter(|&j| !is_fixed(j))
            .min_by(|&a, &b| (x[a] - 0.5).abs().total_cmp(&(x[b] - 0.5).abs()).then(a.cmp(&b)));
        let Some(j) = branch else { continue };
        for one in [true, false] {
            seq += 1;
            let mut fixed = node.fixed.clone();
            fixed.push((j, one));
            heap.push(Node { bound, depth: node.depth + 1, seq, fixed });
        }
    }
    Selection {
        treated: best_sel[..nt].to_vec(),
        control: best_sel[nt..].to_vec(),
        count: best_count,
        nodes,
        hit_limit,
    }
}

/// Cardinality matching: the largest balanced treated and control subsets
/// under the given constraints, then optimal Mahalanobis pairing within them.
///
/// Standardized differences use the pooled standard deviation of the full
/// sample, so the constraints are linear in the selection.
pub fn cardinality_match(
    d: &Dataset,
    constraints: &[BalanceConstraint],
    config: &CardinalityConfig,
) -> Result<MatchResult, MatchingError> {
    if !(0.0..1.0).contains(&config.gap) {
        return Err(MatchingError::InvalidConfig(format!("gap must lie in [0, 1), got {}", config.gap)));
    }
    let treated_flags = d.treated();
    let t_rows: Vec<usize> = (0..d.len()).filter(|&i| treated_flags[i]).collect();
    let c_rows: Vec<usize> = (0..d.len()).filter(|&i| !treated_flags[i]).collect();
    let mut cols = Vec::new();
    let mut thresholds = Vec::new();
    let mut scales = Vec::new();
    for con in constraints {
        let j = d.column_index(&con.covariate).ok_or_else(|| MatchingError::UnknownCovariate(con.covariate.clone()))?;
        if !(con.max_abs_std_diff >= 0.0) {
            return Err(MatchingError::InvalidConfig(format!("threshold for `{}` must be nonnegative", con.covariate)));
        }
        let v = d.column_values(j);
        let xt: Vec<f64> = t_rows.iter().map(|&i| v[i]).collect();
        let xc: Vec<f64> = c_rows.iter().map(|&i| v[i]).collect();
        let sd = denominator(&xt, &xc, DenominatorPolicy::PooledSd)?;
        if sd > 0.0 {
            cols.push(j);
            thresholds.push(con.max_abs_std_diff);
            scales.push((v.iter().sum::<f64>() / v.len() as f64, sd));
        }
    }
    let standardized = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, k| (d.units()[rows[i]].x[cols[k]] - scales[k].0) / scales[k].1)
    };
    let (s_t, s_c) = (standardized(&t_rows), standardized(&c_rows));
    let limit = config.time_limit_secs.map(Duration::from_secs_f64);
    let sel = select_balanced(&s_t, &s_c, &thresholds, config.max_nodes, config.gap, limit);
    if sel.count == 0 {
        return Err(MatchingError::Infeasible);
    }

    let w = whiten(&d.design(&d.covariate_indices(false)), &treated_flags)?;
    let chosen_t: Vec<usize> = (0..t_rows.len()).filter(|&i| sel.treated[i]).map(|i| t_rows[i]).collect();
    let chosen_c: Vec<usize> = (0..c_rows.len()).filter(|&i| sel.control[i]).map(|i| c_rows[i]).collect();
    let dm = DistanceMatrix {
        treated_ids: chosen_t.iter().map(|&i| d.units()[i].id).collect(),
        control_ids: chosen_c.iter().map(|&i| d.units()[i].id).collect(),
        values: DMatrix::from_fn(chosen_t.len(), chosen_c.len(), |a, b| (w.row(chosen_t[a]) - w.row(chosen_c[b])).norm()),
        treated: chosen_t,
        control: chosen_c,
        treated_scores: None,
    };
    let mut result = optimal_pair_match(&dm);
    let mut unmatched: Vec<i64> = (0..t_rows.len()).filter(|&i| !sel.treated[i]).map(|i| d.units()[t_rows[i]].id).collect();
    unmatched.extend(&result.unmatched_treated);
    unmatched.sort_unstable();
    result.unmatched_treated = unmatched;
    result.hit_limit = sel.hit_limit;

    // Audit the realized matched sample against every constraint.
    let m = result.len() as f64;
    for (k, &j) in cols.iter().enumerate() {
        let diff: f64 = result.pairs.iter().map(|p| d.units()[p.treated_row].x[j] - d.units()[p.control_row].x[j]).sum::<f64>() / m;
        if diff.abs() > thresholds[k] * scales[k].1 + 1e-9 * scales[k].1 {
            return Err(MatchingError::AuditFailed(format!("column {} has standardized difference {}", d.columns()[j].name, diff / scales[k].1)));
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, CovariateSchema, Unit};
    use crate::rng::rng_from_seed;
    use crate::stats;
    use rand::Rng as _;

    fn dataset(t: &[Vec<f64>], c: &[Vec<f64>]) -> Dataset {
        let p = t[0].len();
        let schema = (0..p).map(|j| CovariateSchema::continuous(&format!("x{j}"))).collect();
        let units = t
            .iter()
            .map(|x| (true, x))
            .chain(c.iter().map(|x| (false, x)))
            .enumerate()
            .map(|(i, (z, x))| Unit { id: i as i64 + 1, arm: Arm::Nrs, z, y: vec![0.0], x: x.clone() })
            .collect();
        Dataset::new(schema, vec!["y".into()], units).unwrap()
    }

    /// Largest m with treated and control subsets of size m whose mean
    /// differences are within `thr` pooled standard deviations.
    fn exhaustive(t: &[Vec<f64>], c: &[Vec<f64>], thr: f64) -> usize {
        let p = t[0].len();
        let sds: Vec<f64> = (0..p)
            .map(|j| {
                let a: Vec<f64> = t.iter().map(|r| r[j]).collect();
                let b: Vec<f64> = c.iter().map(|r| r[j]).collect();
                ((stats::variance(&a) + stats::variance(&b)) / 2.0).sqrt()
            })
            .collect();
        let subsets = |rows: &[Vec<f64>]| -> Vec<(usize, Vec<f64>)> {
            (0u32..1 << rows.len())
                .map(|mask| {
                    let members: Vec<&Vec<f64>> = (0..rows.len()).filter(|i| mask >> i & 1 == 1).map(|i| &rows[i]).collect();
                    (members.len(), (0..p).map(|j| members.iter().map(|r| r[j]).sum()).collect())
                })
                .collect()
        };
        let (st, sc) = (subsets(t), subsets(c));
        let mut best = 0;
        for (mt, sum_t) in &st {
            if *mt <= best {
                continue;
            }
            for (mc, sum_c) in &sc {
                if mc == mt && (0..p).all(|j| ((sum_t[j] - sum_c[j]) / *mt as f64).abs() <= thr * sds[j] + 1e-9) {
                    best = *mt;
                    break;
                }
            }
        }
        best
    }

    fn constraints(d: &Dataset, thr: f64) -> Vec<BalanceConstraint> {
        default_constraints(d, thr)
    }

    #[test]
    fn loose_constraints_match_everyone() {
        let t = vec![vec![0.0], vec![1.0], vec![5.0]];
        let c = vec![vec![2.0], vec![3.0], vec![9.0], vec![4.0]];
        let d = dataset(&t, &c);
        let m = cardinality_match(&d, &constraints(&d, 10.0), &CardinalityConfig::default()).unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn hand_built_three_of_four() {
        // Pooled sd is 5; matching all four leaves a mean gap of one sd.
        let t = vec![vec![0.0], vec![0.0], vec![0.0], vec![10.0]];
        let c = vec![vec![0.0], vec![0.0], vec![0.0], vec![-10.0]];
        assert_eq!(exhaustive(&t, &c, 0.1), 3);
        let d = dataset(&t, &c);
        let m = cardinality_match(&d, &constraints(&d, 0.1), &CardinalityConfig::default()).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.pairs.iter().all(|p| p.treated_id != 4 && p.control_id != 8));
        assert!(!m.hit_limit);
    }

    #[test]
    fn disjoint_supports_are_infeasible() {
        let d = dataset(&[vec![0.0], vec![1.0]], &[vec![10.0], vec![11.0]]);
        assert!(matches!(cardinality_match(&d, &constraints(&d, 0.01), &CardinalityConfig::default()), Err(MatchingError::Infeasible)));
    }

    #[test]
    fn unknown_covariate_rejected() {
        let d = dataset(&[vec![0.0], vec![1.0]], &[vec![0.5], vec![1.5]]);
        let bad = vec![BalanceConstraint { covariate: "nope".into(), max_abs_std_diff: 0.1 }];
        assert!(matches!(cardinality_match(&d, &bad, &CardinalityConfig::default()), Err(MatchingError::UnknownCovariate(_))));
    }

    #[test]
    fn agrees_with_exhaustive_search_on_random_instances() {
        let mut rng = rng_from_seed(11);
        for _ in 0..25 {
            let nt = rng.random_range(2..=7);
            let nc = rng.random_range(2..=7);
            let shift: f64 = rng.random_range(0.0..1.5);
            let t: Vec<Vec<f64>> = (0..nt).map(|_| vec![rng.random::<f64>() + shift, rng.random::<f64>()]).collect();
            let c: Vec<Vec<f64>> = (0..nc).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() * 2.0]).collect();
            let thr = 0.1;
            let want = exhaustive(&t, &c, thr);
            let d = dataset(&t, &c);
            let got = match cardinality_match(&d, &constraints(&d, thr), &CardinalityConfig::default()) {
                Ok(m) => {
                    assert!(!m.hit_limit);
                    m.len()
                }
                Err(MatchingError::Infeasible) => 0,
                Err(e) => panic!("{e}"),
            };
            assert_eq!(got, want);
        }
    }

    fn random_problem(seed: u64, nt: usize, nc: usize, k: usize) -> Problem {
        let mut rng = rng_from_seed(seed);
        let s_t = DMatrix::from_fn(nt, k, |_, j| rng.random::<f64>() + 0.3 * j as f64 / k as f64);
        let s_c = DMatrix::from_fn(nc, k, |_, _| rng.random::<f64>());
        Problem::new(&s_t, &s_c, &vec![0.05; k])
    }

    #[test]
    fn repair_always_yields_a_feasible_selection() {
        let mut rng = rng_from_seed(5);
        for seed in 0..40 {
            let (nt, nc) = (rng.random_range(1..30), rng.random_range(1..30));
            let p = random_problem(seed, nt, nc, rng.random_range(1..5));
            let start: Vec<bool> = (0..nt + nc).map(|_| rng.random::<bool>()).collect();
            assert!(p.feasible(&p.repair(start)), "seed {seed}");
        }
    }

    #[test]
    fn gap_bounds_the_shortfall() {
        for seed in 0..5 {
            let p = random_problem(100 + seed, 40, 30, 3);
            let exact = select_balanced(&p.s_t, &p.s_c, &p.thresholds, 20_000, 0.0, None);
            let loose = select_balanced(&p.s_t, &p.s_c, &p.thresholds, 20_000, 0.1, None);
            assert!(!exact.hit_limit);
            assert!(loose.count <= exact.count);
            assert!(loose.count as f64 >= 0.9 * exact.count as f64 - 1.0, "{} vs {}", loose.count, exact.count);
            let sel: Vec<bool> = loose.treated.iter().chain(&loose.control).copied().collect();
            assert!(p.feasible(&sel));
        }
    }
}
