//! Dense bounded-variable primal simplex for the small linear programs that
//! arise in cardinality matching.
//!
//! Variables carry explicit bounds; nonbasic variables sit at either bound.
//! Phase 1 drives artificial variables to zero, phase 2 maximizes the
//! objective. Pricing is Dantzig's rule, switching to Bland's rule after a
//! run of degenerate pivots.

const EPS: f64 = 1e-9;
const MAX_ITER: usize = 100_000;
const BLAND_AFTER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
}

/// `maximize objective . x` subject to `rows[i] . x (<= | =) rhs[i]` and
/// `lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub kinds: Vec<RowKind>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

struct Tableau {
    ncols: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    enterable: Vec<bool>,
}

enum Run {
    Done,
    Unbounded,
    Limit,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let p = self.at(r, j);
        for k in 0..nc {
            self.t[r * nc + k] /= p;
        }
        for i in 0..self.m() {
            if i == r {
                continue;
            }
            let f = self.at(i, j);
            if f != 0.0 {
                for k in 0..nc {
                    self.t[i * nc + k] -= f * self.t[r * nc + k];
                }
            }
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    fn value_of_nonbasic(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn run(&mut self, c: &[f64]) -> Run {
        let m = self.m();
        let mut degenerate = 0usize;
        for _ in 0..MAX_ITER {
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.ncols {
                if self.is_basic[j] || !self.enterable[j] {
                    continue;
                }
                let d = c[j] - (0..m).map(|i| c[self.basis[i]] * self.at(i, j)).sum::<f64>();
                let eligible = if self.at_upper[j] { d < -EPS } else { d > EPS };
                if !eligible {
                    continue;
                }
                if degenerate >= BLAND_AFTER {
                    entering = Some((j, d));
                    break;
                }
                if entering.map_or(true, |(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((j, _)) = entering else { return Run::Done };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            let mut theta = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..m {
                let alpha = dir * self.at(i, j);
                let (lim, to_upper) = if alpha > EPS {
                    (self.beta[i].max(0.0) / alpha, false)
                } else if alpha < -EPS {
                    let ub = self.upper[self.basis[i]];
                    if !ub.is_finite() {
                        continue;
                    }
                    ((ub - self.beta[i]).max(0.0) / -alpha, true)
                } else {
                    continue;
                };
                // Near-ties go to the lowest basic variable index.
                let better = if lim < theta - EPS {
                    true
                } else if lim <= theta + EPS {
                    match leave {
                        Some((r, _)) => self.basis[i] < self.basis[r],
                        None => lim < theta,
                    }
                } else {
                    false
                };
                if better {
                    theta = lim;
                    leave = Some((i, to_upper));
                }
            }
            if !theta.is_finite() {
                return Run::Unbounded;
            }
            degenerate = if theta < EPS { degenerate + 1 } else { 0 };
            for i in 0..m {
                self.beta[i] -= dir * self.at(i, j) * theta;
            }
            match leave {
                None => self.at_upper[j] = !self.at_upper[j],
                Some((r, to_upper)) => {
                    let entering_value = self.value_of_nonbasic(j) + dir * theta;
                    let leaving = self.basis[r];
                    self.at_upper[leaving] = to_upper;
                    self.pivot(r, j);
                    self.beta[r] = entering_value;
                    self.at_upper[j] = false;
                }
            }
        }
        Run::Limit
    }
}

pub fn solve(lp: &LinearProgram) -> LpStatus {
    let n = lp.objective.len();
    let m = lp.rows.len();
    let mut shifted_upper = Vec::with_capacity(n);
    for j in 0..n {
        let u = lp.upper[j] - lp.lower[j];
        if u < -EPS {
            return LpStatus::Infeasible;
        }
        shifted_upper.push(u.max(0.0));
    }
    let rhs: Vec<f64> = (0..m)
        .map(|i| lp.rhs[i] - lp.rows[i].iter().zip(&lp.lower).map(|(a, l)| a * l).sum::<f64>())
        .collect();

    let n_slack = lp.kinds.iter().filter(|k| **k == RowKind::Le).count();
    let needs_art: Vec<bool> = (0..m).map(|i| lp.kinds[i] == RowKind::Eq || rhs[i] < 0.0).collect();
    let n_art = needs_art.iter().filter(|&&b| b).count();
    let ncols = n + n_slack + n_art;

    let mut t = vec![0.0; m * ncols];
    let mut beta = vec![0.0; m];
    let mut basis = vec![0; m];
    let (mut slack, mut art) = (n, n + n_slack);
    for i in 0..m {
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * ncols + j] = sign * lp.rows[i][j];
        }
        if lp.kinds[i] == RowKind::Le {
            t[i * ncols + slack] = sign;
            if !needs_art[i] {
                basis[i] = slack;
            }
            slack += 1;
        }
        if needs_art[i] {
            t[i * ncols + art] = 1.0;
            basis[i] = art;
            art += 1;
        }
        beta[i] = rhs[i].abs();
    }
    let mut upper = shifted_upper;
    upper.extend(std::iter::repeat(f64::INFINITY).take(n_slack + n_art));
    let mut is_basic = vec![false; ncols];
    for &b in &basis {
        is_basic[b] = true;
    }
    let enterable = (0..ncols).map(|j| upper[j] > EPS).collect();
    let mut tab = Tableau { ncols, t, beta, basis, is_basic, at_upper: vec![false; ncols], upper, enterable };

    let art_range = n + n_slack..ncols;
    if n_art > 0 {
        let c1: Vec<f64> = (0..ncols).map(|j| if art_range.contains(&j) { -1.0 } else { 0.0 }).collect();
        match tab.run(&c1) {
            Run::Done => {}
            Run::Unbounded => return LpStatus::Infeasible,
            Run::Limit => return LpStatus::IterationLimit,
        }
        let infeas: f64 = (0..m).filter(|&i| art_range.contains(&tab.basis[i])).map(|i| tab.beta[i]).sum();
        if infeas > 1e-7 {
            return LpStatus::Infeasible;
        }
        for j in art_range.clone() {
            tab.enterable[j] = false;
            tab.upper[j] = 0.0;
        }
        for r in 0..m {
            if !art_range.contains(&tab.basis[r]) {
                continue;
            }
            let candidate = (0..n + n_slack).find(|&j| !tab.is_basic[j] && tab.at(r, j).abs() > 1e-7);
            if let Some(j) = candidate {
                let v = tab.value_of_nonbasic(j);
                tab.pivot(r, j);
                tab.beta[r] = v;
                tab.at_upper[j] = false;
            }
        }
    }

    let mut c2 = vec![0.0; ncols];
    c2[..n].copy_from_slice(&lp.objective);
    match tab.run(&c2) {
        Run::Done => {}
        Run::Unbounded => return LpStatus::Unbounded,
        Run::Limit => return LpStatus::IterationLimit,
    }
    let mut x: Vec<f64> = (0..n).map(|j| if tab.is_basic[j] { 0.0 } else { tab.value_of_nonbasic(j) }).collect();
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.beta[i];
        }
    }
    for j in 0..n {
        x[j] = (x[j] + lp.lower[j]).clamp(lp.lower[j], lp.upper[j]);
    }
    let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    LpStatus::Optimal { x, value }
}
