//! Fits nonrandomized-arm selection coefficients to target standardized
//! differences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DgpConfig, SelectionSpec, SynthError};
use crate::rng::rng_from_seed;
use crate::stats::expit;

const BRACKET: f64 = 8.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    /// When set, the intercept is re-solved after every coefficient move so
    /// the expected treated share stays fixed.
    pub treated_share: Option<f64>,
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
    /// Size of the fixed calibration sample.
    pub n: usize,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { treated_share: None, tol: 0.005, max_iter: 25, n: 100_000, seed: 20_240_601 }
    }
}

struct Sample {
    /// Standardized columns, column-major.
    xs: Vec<Vec<f64>>,
    eta: Vec<f64>,
}

impl Sample {
    fn intercept(&self, share: Option<f64>, start: f64) -> f64 {
        let Some(share) = share else { return start };
        let n = self.eta.len() as f64;
        let (mut lo, mut hi) = (-40.0, 40.0);
        let mut b = start.clamp(lo, hi);
        for _ in 0..100 {
            let (mut g, mut dg) = (0.0, 0.0);
            for &e in &self.eta {
                let p = expit(b + e);
                g += p;
                dg += p * (1.0 - p);
            }
            let g = g / n - share;
            if g.abs() < 1e-12 {
                break;
            }
            if g > 0.0 {
                hi = b;
            } else {
                lo = b;
            }
            let newton = b - g / (dg / n);
            b = if newton > lo && newton < hi && dg > 0.0 { newton } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-14 {
                break;
            }
        }
        b
    }

    /// Expected standardized difference of column `j` (control-sd
    /// denominator) with that column's coefficient moved by `shift`.
    fn std_diff(&self, j: usize, shift: f64, b: f64) -> f64 {
        let x = &self.xs[j];
        let (mut st, mut sc, mut wt, mut wc) = (0.0, 0.0, 0.0, 0.0);
        let p: Vec<f64> = self.eta.iter().zip(x).map(|(e, v)| expit(b + e + shift * v)).collect();
        for (pi, v) in p.iter().zip(x) {
            st += pi * v;
            wt += pi;
            sc += (1.0 - pi) * v;
            wc += 1.0 - pi;
        }
        let (mt, mc) = (st / wt, sc / wc);
        let vc = p.iter().zip(x).map(|(pi, v)| (1.0 - pi) * (v - mc) * (v - mc)).sum::<f64>() / wc;
        (mt - mc) / vc.sqrt()
    }

    fn eval(&self, j: usize, shift: f64, share: Option<f64>, b0: f64) -> (f64, f64) {
        if shift == 0.0 {
            let b = self.intercept(share, b0);
            return (self.std_diff(j, 0.0, b), b);
        }
        let moved = Sample { xs: Vec::new(), eta: self.eta.iter().zip(&self.xs[j]).map(|(e, v)| e + shift * v).collect() };
        let b = moved.intercept(share, b0);
        (self.std_diff(j, shift, b), b)
    }
}

/// Coordinate-wise bisection of the selection coefficients on `[-8, 8]`
/// until every targeted column's expected standardized difference (control
/// sd denominator) over a fixed calibration sample is within `tol` of its
/// target. Columns without a target keep their coefficients from `cfg`.
pub fn calibrate_to_targets(
    cfg: &DgpConfig,
    targets: &BTreeMap<String, f64>,
    options: &CalibrationOptions,
) -> Result<SelectionSpec, SynthError> {
    let layout = cfg.layout()?;
    let p = layout.columns.len();
    let mut idx = Vec::with_capacity(targets.len());
    for (name, &t) in targets {
        let j = layout
            .columns
            .iter()
            .position(|c| &c.name == name)
            .ok_or_else(|| SynthError::InvalidConfig(format!("target refers to unknown column `{name}`")))?;
        if !t.is_finite() {
            return Err(SynthError::InvalidConfig(format!("target for `{name}` is not finite")));
        }
        idx.push((j, t));
    }
    if let Some(s) = options.treated_share {
        if !(s > 0.0 && s < 1.0) {
            return Err(SynthError::InvalidConfig("treated share must lie in (0, 1)".into()));
        }
    }
    if options.n < 100 || !(options.tol > 0.0) {
        return Err(SynthError::InvalidConfig("calibration needs n >= 100 and tol > 0".into()));
    }

    let mut rng = rng_from_seed(options.seed);
    let mut xs = vec![Vec::with_capacity(options.n); p];
    let mut eta = Vec::with_capacity(options.n);
    let mut coefs = layout.sel_lin.clone();
    for _ in 0..options.n {
        let d = layout.draw(cfg, &mut rng);
        eta.push(layout.selection_index(&d, cfg.u_strength));
        for (col, v) in xs.iter_mut().zip(&d.xs) {
            col.push(*v);
        }
    }
    let mut sample = Sample { xs, eta };
    let mut b = sample.intercept(options.treated_share, cfg.selection.intercept);

    for _ in 0..options.max_iter {
        let worst = idx
            .iter()
            .map(|&(j, t)| (j, (sample.eval(j, 0.0, options.treated_share, b).0 - t).abs()))
            .fold((usize::MAX, 0.0), |acc, (j, e)| if e > acc.1 { (j, e) } else { acc });
        if worst.1 <= options.tol {
            return Ok(spec_from(cfg, &layout.columns, &coefs, b));
        }
        for &(j, t) in &idx {
            let c0 = coefs[j];
            let f = |c: f64, b0: f64| sample.eval(j, c - c0, options.treated_share, b0);
            let (flo, _) = f(-BRACKET, b);
            let (fhi, _) = f(BRACKET, b);
            if !(flo <= t && t <= fhi) {
                return Err(SynthError::Unachievable { covariate: layout.columns[j].name.clone() });
            }
            let (mut lo, mut hi) = (-BRACKET, BRACKET);
            let mut bb = b;
            let mut c = 0.5 * (lo + hi);
            for _ in 0..60 {
                c = 0.5 * (lo + hi);
                let (fm, bm) = f(c, bb);
                bb = bm;
                if (fm - t).abs() < 0.05 * options.tol || hi - lo < 1e-7 {
                    break;
                }
                if fm < t {
                    lo = c;
                } else {
                    hi = c;
                }
            }
            for (e, v) in sample.eta.iter_mut().zip(&sample.xs[j]) {
                *e += (c - c0) * v;
            }
            coefs[j] = c;
            b = sample.intercept(options.treated_share, bb);
        }
    }
    let worst = idx
        .iter()
        .map(|&(j, t)| (j, (sample.eval(j, 0.0, options.treated_share, b).0 - t).abs()))
        .fold((0, 0.0), |acc, (j, e)| if e > acc.1 { (j, e) } else { acc });
    if worst.1 <= options.tol {
        Ok(spec_from(cfg, &layout.columns, &coefs, b))
    } else {
        Err(SynthError::Unachievable { covariate: layout.columns[worst.0].name.clone() })
    }
}

fn spec_from(cfg: &DgpConfig, columns: &[crate::data::Column], coefs: &[f64], intercept: f64) -> SelectionSpec {
    SelectionSpec {
        intercept,
        coefs: columns.iter().zip(coefs).filter(|(_, &c)| c != 0.0).map(|(col, &c)| (col.name.clone(), c)).collect(),
        quadratic: cfg.selection.quadratic.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{balance_table, DenominatorPolicy};
    use crate::synthgen::{generate, CovariateSpec, OutcomeSpec};

    fn base() -> DgpConfig {
        DgpConfig {
            n_rct: 100,
            n_nrs: 20_000,
            covariates: vec![
                CovariateSpec::normal("a", 0.0, 1.0),
                CovariateSpec::normal("b", 10.0, 3.0),
                CovariateSpec::bernoulli("c", 0.3),
            ],
            selection: SelectionSpec::default(),
            outcomes: vec![OutcomeSpec {
                name: "y_v".into(),
                baseline: 0.0,
                coefs: BTreeMap::new(),
                treatment_effect: 0.0,
                interactions: BTreeMap::new(),
                quadratic: BTreeMap::new(),
                noise_sd: 1.0,
            }],
            u_strength: 0.0,
            seed: 1,
        }
    }

    fn quick() -> CalibrationOptions {
        CalibrationOptions { n: 20_000, ..Default::default() }
    }

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let targets = BTreeMap::from([("a".into(), 0.0), ("b".into(), 0.0), ("c".into(), 0.0)]);
        let s = calibrate_to_targets(&base(), &targets, &quick()).unwrap();
        for c in s.coefs.values() {
            assert!(c.abs() < 0.03, "{c}");
        }
    }

    #[test]
    fn single_target_reproduced_by_the_generator() {
        let targets = BTreeMap::from([("b".into(), -0.5)]);
        let opts = CalibrationOptions { treated_share: Some(0.4), ..quick() };
        let mut cfg = base();
        cfg.selection = calibrate_to_targets(&cfg, &targets, &opts).unwrap();
        let s = generate(&cfg).unwrap();
        let t = balance_table(&s.nrs, None, DenominatorPolicy::ControlSd).unwrap();
        let sd = t.row("b").unwrap().std_diff.unwrap();
        assert!((-0.55..=-0.45).contains(&sd), "{sd}");
        let share = s.nrs.n_treated() as f64 / s.nrs.len() as f64;
        assert!((share - 0.4).abs() < 0.02, "{share}");
    }

    #[test]
    fn infeasible_target_is_unachievable() {
        let targets = BTreeMap::from([("a".into(), 5.0)]);
        assert!(matches!(
            calibrate_to_targets(&base(), &targets, &quick()),
            Err(SynthError::Unachievable { ref covariate }) if covariate == "a"
        ));
    }

    #[test]
    fn unknown_target_column_rejected() {
        let targets = BTreeMap::from([("zz".into(), 0.1)]);
        assert!(matches!(calibrate_to_targets(&base(), &targets, &quick()), Err(SynthError::InvalidConfig(_))));
    }
}
