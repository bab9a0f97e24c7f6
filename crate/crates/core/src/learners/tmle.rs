//! Targeted maximum likelihood with a logistic fluctuation on outcomes
//! scaled to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::estimate::{Estimand, Interval};
use crate::propensity::DEFAULT_BOUNDS;
use crate::stats::{self, expit, logit, Z_95};

/// Bound keeping scaled initial predictions away from 0 and 1.
const Q_BOUND: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleResult {
    pub estimand: Estimand,
    /// Targeted estimate, in outcome units.
    pub psi: f64,
    pub initial_psi: f64,
    /// Fluctuation coefficient on the scaled outcome.
    pub epsilon: f64,
    /// Influence-curve standard error, in outcome units.
    pub se: f64,
    pub ci: Interval,
    /// Outcome range used for scaling.
    pub bounds: (f64, f64),
    /// `|mean H (y - Q)|` on the scaled outcome before and after targeting.
    pub eic_residual_initial: f64,
    pub eic_residual: f64,
    /// Set when the fluctuation diverged and the initial fit was kept.
    pub fluctuation_failed: bool,
}

struct Clever {
    h1: Vec<f64>,
    h0: Vec<f64>,
}

fn clever_covariate(z: &[bool], e: &[f64], estimand: Estimand) -> Clever {
    match estimand {
        Estimand::Ate => Clever {
            h1: e.iter().map(|v| 1.0 / v).collect(),
            h0: e.iter().map(|v| -1.0 / (1.0 - v)).collect(),
        },
        Estimand::Att => {
            let p = z.iter().filter(|&&t| t).count() as f64 / z.len() as f64;
            Clever { h1: vec![1.0 / p; e.len()], h0: e.iter().map(|v| -v / ((1.0 - v) * p)).collect() }
        }
    }
}

/// Maximizes the Bernoulli quasi-likelihood of `ys` over `eps` in
/// `expit(offset + eps h)` by safeguarded Newton steps.
fn fluctuate(ys: &[f64], offset: &[f64], h: &[f64]) -> Option<f64> {
    let loglik = |eps: f64| -> f64 {
        ys.iter()
            .zip(offset)
            .zip(h)
            .map(|((y, o), hh)| {
                let eta = o + eps * hh;
                // y log p + (1-y) log(1-p) in a numerically stable form.
                y * eta - eta.max(0.0) - (-eta.abs()).exp().ln_1p()
            })
            .sum()
    };
    let mut eps = 0.0;
    let mut ll = loglik(eps);
    for _ in 0..200 {
        let (mut score, mut info) = (0.0, 0.0);
        for ((y, o), hh) in ys.iter().zip(offset).zip(h) {
            let p = expit(o + eps * hh);
            score += hh * (y - p);
            info += hh * hh * p * (1.0 - p);
        }
        if score.abs() < 1e-12 * ys.len() as f64 {
            return Some(eps);
        }
        if !(info > 0.0) {
            return None;
        }
        let mut step = score / info;
        let mut improved = false;
        for _ in 0..60 {
            let cand = eps + step;
            let lc = loglik(cand);
            if lc.is_finite() && lc >= ll {
                eps = cand;
                ll = lc;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved || !eps.is_finite() {
            return eps.is_finite().then_some(eps);
        }
        if step.abs() < 1e-14 * (1.0 + eps.abs()) {
            return Some(eps);
        }
    }
    eps.is_finite().then_some(eps)
}

/// Targets initial outcome predictions `q1`, `q0` (outcome units) using
/// propensity scores `e`, truncated to `[0.01, 0.99]`.
pub fn tmle(y: &[f64], z: &[bool], q1: &[f64], q0: &[f64], e: &[f64], estimand: Estimand) -> Result<TmleResult, LearnerError> {
    let n = y.len();
    if [z.len(), q1.len(), q0.len(), e.len()].iter().any(|&l| l != n) {
        return Err(LearnerError::LengthMismatch);
    }
    let n_t = z.iter().filter(|&&t| t).count();
    if n_t == 0 || n_t == n {
        return Err(LearnerError::Degenerate("both treatment groups must be present".into()));
    }
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(LearnerError::Degenerate("outcome is constant".into()));
    }
    let scale = |v: f64| ((v - lo) / range).clamp(Q_BOUND, 1.0 - Q_BOUND);
    let ys: Vec<f64> = y.iter().map(|v| (v - lo) / range).collect();
    let e: Vec<f64> = e.iter().map(|v| v.clamp(DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1)).collect();
    let l1: Vec<f64> = q1.iter().map(|&v| logit(scale(v))).collect();
    let l0: Vec<f64> = q0.iter().map(|&v| logit(scale(v))).collect();
    let Clever { h1, h0 } = clever_covariate(z, &e, estimand);
    let h: Vec<f64> = (0..n).map(|i| if z[i] { h1[i] } else { h0[i] }).collect();
    let offset: Vec<f64> = (0..n).map(|i| if z[i] { l1[i] } else { l0[i] }).collect();

    let evaluate = |eps: f64| {
        let s1: Vec<f64> = (0..n).map(|i| expit(l1[i] + eps * h1[i])).collect();
        let s0: Vec<f64> = (0..n).map(|i| expit(l0[i] + eps * h0[i])).collect();
        let psi = match estimand {
            Estimand::Ate => (0..n).map(|i| s1[i] - s0[i]).sum::<f64>() / n as f64,
            Estimand::Att => (0..n).filter(|&i| z[i]).map(|i| s1[i] - s0[i]).sum::<f64>() / n_t as f64,
        };
        let resid: Vec<f64> = (0..n).map(|i| ys[i] - if z[i] { s1[i] } else { s0[i] }).collect();
        let eic_resid = ((0..n).map(|i| h[i] * resid[i]).sum::<f64>() / n as f64).abs();
        let p = n_t as f64 / n as f64;
        let eif: Vec<f64> = (0..n)
            .map(|i| {
                let plug = s1[i] - s0[i] - psi;
                h[i] * resid[i]
                    + match estimand {
                        Estimand::Ate => plug,
                        Estimand::Att => {
                            if z[i] {
                                plug / p
                            } else {
                                0.0
                            }
                        }
                    }
            })
            .collect();
        (psi, eic_resid, stats::sd(&eif) / (n as f64).sqrt())
    };

    let (initial_psi, eic_residual_initial, initial_se) = evaluate(0.0);
    let (epsilon, fluctuation_failed) = match fluctuate(&ys, &offset, &h) {
        Some(eps) => (eps, false),
        None => (0.0, true),
    };
    let (psi_s, eic_residual, se_s) = if fluctuation_failed { (initial_psi, eic_residual_initial, initial_se) } else { evaluate(epsilon) };
    let psi = psi_s * range;
    let se = se_s * range;
    Ok(TmleResult {
        estimand,
        psi,
        initial_psi: initial_psi * range,
        epsilon,
        se,
        ci: Interval::new(psi - Z_95 * se, psi + Z_95 * se),
        bounds: (lo, hi),
        eic_residual_initial,
        eic_residual,
        fluctuation_failed,
    })
}
