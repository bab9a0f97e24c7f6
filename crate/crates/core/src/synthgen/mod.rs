//! Seeded two-arm data with known ground truth.
//!
//! Covariates are drawn from their population distributions; normal
//! covariates may share a standard normal factor through a loading. Every
//! column enters the selection and outcome models on a standardized scale, so
//! coefficients are comparable across covariates. Randomized units are
//! assigned by a fair coin; nonrandomized units select treatment through a
//! logistic model that may also load on an unobserved confounder `u`.

mod calibrate;
mod preset;

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arm, Column, CovariateKind, CovariateRole, CovariateSchema, DataError, Dataset, Unit};
use crate::rng::{derive_seed, rng_from_seed, tag, Rng};
use crate::stats::expit;

pub use calibrate::{calibrate_to_targets, CalibrationOptions};
pub use preset::{reflux_like, reflux_like_nonlinear, reflux_reference_targets, reflux_targets, REFLUX_TREATED_SHARE};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("target for `{covariate}` is not achievable under logistic selection")]
    Unachievable { covariate: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    /// `loading` is the correlation with the shared factor.
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        loading: f64,
    },
    Bernoulli { p: f64 },
    /// Level probabilities in the order given by `levels`.
    Categorical { levels: Vec<String>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: Distribution,
    #[serde(default)]
    pub role: CovariateRole,
}

impl CovariateSpec {
    pub fn normal(name: &str, mean: f64, sd: f64) -> Self {
        CovariateSpec { name: name.into(), dist: Distribution::Normal { mean, sd, loading: 0.0 }, role: CovariateRole::Covariate }
    }

    pub fn with_loading(mut self, l: f64) -> Self {
        if let Distribution::Normal { loading, .. } = &mut self.dist {
            *loading = l;
        }
        self
    }

    pub fn bernoulli(name: &str, p: f64) -> Self {
        CovariateSpec { name: name.into(), dist: Distribution::Bernoulli { p }, role: CovariateRole::Covariate }
    }

    pub fn categorical(name: &str, levels: &[&str], probs: &[f64]) -> Self {
        CovariateSpec {
            name: name.into(),
            dist: Distribution::Categorical { levels: levels.iter().map(|s| s.to_string()).collect(), probs: probs.to_vec() },
            role: CovariateRole::Covariate,
        }
    }

    fn schema(&self) -> CovariateSchema {
        let kind = match &self.dist {
            Distribution::Normal { .. } => CovariateKind::Continuous,
            Distribution::Bernoulli { .. } => CovariateKind::Binary,
            Distribution::Categorical { levels, .. } => CovariateKind::Categorical { levels: levels.clone() },
        };
        CovariateSchema { name: self.name.clone(), kind, role: self.role }
    }
}

/// Logistic self-selection in the nonrandomized arm. Coefficients are keyed
/// by expanded column name and act on standardized columns; `quadratic`
/// terms act on `xs^2 - 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSpec {
    pub intercept: f64,
    pub coefs: BTreeMap<String, f64>,
    pub quadratic: BTreeMap<String, f64>,
}

/// Potential-outcome model, in outcome units:
/// `y0 = baseline + sum coefs*xs + sum quadratic*(xs^2 - 1) + u_strength*noise_sd*u + noise`
/// and `y1 = y0 + treatment_effect + sum interactions*xs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    /// Must start with `y_`.
    pub name: String,
    pub baseline: f64,
    #[serde(default)]
    pub coefs: BTreeMap<String, f64>,
    pub treatment_effect: f64,
    #[serde(default)]
    pub interactions: BTreeMap<String, f64>,
    #[serde(default)]
    pub quadratic: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n_rct: usize,
    pub n_nrs: usize,
    pub covariates: Vec<CovariateSpec>,
    pub selection: SelectionSpec,
    pub outcomes: Vec<OutcomeSpec>,
    #[serde(default)]
    pub u_strength: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Population mean and sd of one expanded column.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean: f64,
    sd: f64,
}

/// Expanded columns with their population moments and the per-column
/// coefficient vectors of a validated configuration.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub(crate) schema: Vec<CovariateSchema>,
    pub(crate) columns: Vec<Column>,
    moments: Vec<Moments>,
    pub(crate) sel_lin: Vec<f64>,
    pub(crate) sel_quad: Vec<f64>,
    outcomes: Vec<OutcomeLayout>,
}

#[derive(Debug, Clone)]
struct OutcomeLayout {
    lin: Vec<f64>,
    quad: Vec<f64>,
    inter: Vec<f64>,
}

fn keyed(map: &BTreeMap<String, f64>, columns: &[Column], what: &str) -> Result<Vec<f64>, SynthError> {
    let mut v = vec![0.0; columns.len()];
    for (name, &c) in map {
        let j = columns
            .iter()
            .position(|col| &col.name == name)
            .ok_or_else(|| SynthError::InvalidConfig(format!("{what} refers to unknown column `{name}`")))?;
        if !c.is_finite() {
            return Err(SynthError::InvalidConfig(format!("{what} coefficient for `{name}` is not finite")));
        }
        v[j] = c;
    }
    Ok(v)
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.layout().map(|_| ())
    }

    pub(crate) fn layout(&self) -> Result<Layout, SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_rct < 40 || self.n_nrs < 40 {
            return bad("need at least 20 units per treatment group, so at least 40 per arm".into());
        }
        if !(self.u_strength >= 0.0 && self.u_strength.is_finite()) {
            return bad("u_strength must be finite and non-negative".into());
        }
        if !self.selection.intercept.is_finite() {
            return bad("selection intercept must be finite".into());
        }
        for c in &self.covariates {
            match &c.dist {
                Distribution::Normal { mean, sd, loading } => {
                    if !(mean.is_finite() && *sd > 0.0 && sd.is_finite()) {
                        return bad(format!("`{}`: normal covariates need a finite mean and sd > 0", c.name));
                    }
                    if !(loading.abs() < 1.0) {
                        return bad(format!("`{}`: factor loading must lie in (-1, 1)", c.name));
                    }
                }
                Distribution::Bernoulli { p } => {
                    if !(*p > 0.0 && *p < 1.0) {
                        return bad(format!("`{}`: Bernoulli p must lie in (0, 1)", c.name));
                    }
                }
                Distribution::Categorical { levels, probs } => {
                    if levels.len() != probs.len() || probs.iter().any(|p| !(*p > 0.0)) {
                        return bad(format!("`{}`: need one positive probability per level", c.name));
                    }
                    if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return bad(format!("`{}`: level probabilities must sum to 1", c.name));
                    }
                }
            }
        }
        let schema: Vec<CovariateSchema> = self.covariates.iter().map(CovariateSpec::schema).collect();
        let names: Vec<String> = self.outcomes.iter().map(|o| o.name.clone()).collect();
        for o in &self.outcomes {
            if !o.name.starts_with("y_") {
                return bad(format!("outcome `{}` must start with `y_`", o.name));
            }
            if !(o.noise_sd >= 0.0 && o.noise_sd.is_finite() && o.baseline.is_finite() && o.treatment_effect.is_finite()) {
                return bad(format!("outcome `{}`: baseline, effect and noise_sd must be finite, noise_sd >= 0", o.name));
            }
        }
        let columns = Dataset::new(schema.clone(), names, Vec::new())?.columns().to_vec();
        let moments = columns
            .iter()
            .map(|col| match &self.covariates[col.source].dist {
                Distribution::Normal { mean, sd, .. } => Moments { mean: *mean, sd: *sd },
                Distribution::Bernoulli { p } => Moments { mean: *p, sd: (p * (1.0 - p)).sqrt() },
                Distribution::Categorical { levels, probs } => {
                    let k = levels.iter().position(|l| Some(l) == col.level.as_ref()).expect("expanded level");
                    let p = probs[k];
                    Moments { mean: p, sd: (p * (1.0 - p)).sqrt() }
                }
            })
            .collect();
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| {
                Ok(OutcomeLayout {
                    lin: keyed(&o.coefs, &columns, &o.name)?,
                    quad: keyed(&o.quadratic, &columns, &o.name)?,
                    inter: keyed(&o.interactions, &columns, &o.name)?,
                })
            })
            .collect::<Result<_, SynthError>>()?;
        Ok(Layout {
            sel_lin: keyed(&self.selection.coefs, &columns, "selection")?,
            sel_quad: keyed(&self.selection.quadratic, &columns, "selection")?,
            schema,
            columns,
            moments,
            outcomes,
        })
    }
}

/// Covariates of one simulated unit.
pub(crate) struct Draw {
    pub(crate) x: Vec<f64>,
    pub(crate) xs: Vec<f64>,
    pub(crate) u: f64,
}

impl Layout {
    pub(crate) fn draw(&self, cfg: &DgpConfig, rng: &mut Rng) -> Draw {
        let mut x = Vec::with_capacity(self.columns.len());
        let factor: f64 = rng.sample(StandardNormal);
        for c in &cfg.covariates {
            match &c.dist {
                Distribution::Normal { mean, sd, loading } => {
                    let e: f64 = rng.sample(StandardNormal);
                    x.push(mean + sd * (loading * factor + (1.0 - loading * loading).sqrt() * e));
                }
                Distribution::Bernoulli { p } => x.push(if rng.random::<f64>() < *p { 1.0 } else { 0.0 }),
                Distribution::Categorical { levels, probs } => {
                    let r: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = levels.len() - 1;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if r < acc {
                            pick = k;
                            break;
                        }
                    }
                    let mut sorted: Vec<&String> = levels.iter().collect();
                    sorted.sort();
                    x.extend(sorted.iter().skip(1).map(|l| if *l == &levels[pick] { 1.0 } else { 0.0 }));
                }
            }
        }
        let xs = x.iter().zip(&self.moments).map(|(v, m)| (v - m.mean) / m.sd).collect();
        let u = rng.sample(StandardNormal);
        Draw { x, xs, u }
    }

    /// Selection linear predictor without the intercept.
    pub(crate) fn selection_index(&self, d: &Draw, u_strength: f64) -> f64 {
        let mut eta = u_strength * d.u;
        for j in 0..d.xs.len() {
            eta += self.sel_lin[j] * d.xs[j] + self.sel_quad[j] * (d.xs[j] * d.xs[j] - 1.0);
        }
        eta
    }

    fn effect(&self, k: usize, spec: &OutcomeSpec, xs: &[f64]) -> f64 {
        spec.treatment_effect + self.outcomes[k].inter.iter().zip(xs).map(|(g, v)| g * v).sum::<f64>()
    }

    fn potential(&self, k: usize, spec: &OutcomeSpec, d: &Draw, u_strength: f64, noise: f64) -> (f64, f64) {
        let o = &self.outcomes[k];
        let mut y0 = spec.baseline + u_strength * spec.noise_sd * d.u + spec.noise_sd * noise;
        for j in 0..d.xs.len() {
            y0 += o.lin[j] * d.xs[j] + o.quad[j] * (d.xs[j] * d.xs[j] - 1.0);
        }
        (y0 + self.effect(k, spec, &d.xs), y0)
    }
}

/// A generated unit with both potential outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUnit {
    #[serde(flatten)]
    pub unit: Unit,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTruth {
    pub outcome: String,
    /// Average effect over the covariate population (both arms share it).
    pub ate: f64,
    /// Average effect among units that select treatment in the nonrandomized arm.
    pub att: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub outcomes: Vec<OutcomeTruth>,
}

impl Truth {
    pub fn outcome(&self, name: &str) -> Option<&OutcomeTruth> {
        self.outcomes.iter().find(|o| o.outcome == name)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub rct: Dataset,
    pub nrs: Dataset,
    pub truth: Truth,
    /// Randomized units first, then nonrandomized units, in id order.
    pub units: Vec<SynthUnit>,
}

const TRUTH_DRAWS: usize = 1_000_000;

/// Generates both arms. Randomized ids run `1..=n_rct`, nonrandomized ids
/// continue from `n_rct + 1`.
pub fn generate(cfg: &DgpConfig) -> Result<SynthData, SynthError> {
    let layout = cfg.layout()?;
    let names: Vec<String> = cfg.outcomes.iter().map(|o| o.name.clone()).collect();
    let mut units = Vec::with_capacity(cfg.n_rct + cfg.n_nrs);
    for (arm, n, first_id) in [(Arm::Rct, cfg.n_rct, 1), (Arm::Nrs, cfg.n_nrs, cfg.n_rct as i64 + 1)] {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[tag(&arm.to_string())]));
        for i in 0..n {
            let d = layout.draw(cfg, &mut rng);
            let z = match arm {
                Arm::Rct => rng.random::<f64>() < 0.5,
                Arm::Nrs => rng.random::<f64>() < expit(cfg.selection.intercept + layout.selection_index(&d, cfg.u_strength)),
            };
            let mut y1 = Vec::with_capacity(names.len());
            let mut y0 = Vec::with_capacity(names.len());
            for (k, spec) in cfg.outcomes.iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                let (a, b) = layout.potential(k, spec, &d, cfg.u_strength, noise);
                y1.push(a);
                y0.push(b);
            }
            let y = if z { y1.clone() } else { y0.clone() };
            units.push(SynthUnit { unit: Unit { id: first_id + i as i64, arm, z, y, x: d.x }, y1, y0 });
        }
    }
    let (rct_units, nrs_units) = units.split_at(cfg.n_rct);
    let build = |us: &[SynthUnit]| Dataset::new(layout.schema.clone(), names.clone(), us.iter().map(|s| s.unit.clone()).collect());
    let rct = build(rct_units)?;
    let nrs = build(nrs_units)?;
    let truth = truth(cfg, &layout);
    Ok(SynthData { rct, nrs, truth, units })
}

/// Standardized columns have population mean zero, so the average effect is
/// the constant effect. The effect on the treated needs the selection model
/// and is integrated by Monte Carlo unless there are no interactions.
fn truth(cfg: &DgpConfig, layout: &Layout) -> Truth {
    let needs_mc = layout.outcomes.iter().any(|o| o.inter.iter().any(|&g| g != 0.0));
    let att_shift: Vec<f64> = if needs_mc {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[tag("truth")]));
        let mut num = vec![0.0; cfg.outcomes.len()];
        let mut den = 0.0;
        for _ in 0..TRUTH_DRAWS {
            let d = layout.draw(cfg, &mut rng);
            let p = expit(cfg.selection.intercept + layout.selection_index(&d, cfg.u_strength));
            den += p;
            for (k, o) in layout.outcomes.iter().enumerate() {
                num[k] += p * o.inter.iter().zip(&d.xs).map(|(g, v)| g * v).sum::<f64>();
            }
        }
        num.iter().map(|v| v / den).collect()
    } else {
        vec![0.0; cfg.outcomes.len()]
    };
    Truth {
        seed: cfg.seed,
        outcomes: cfg
            .outcomes
            .iter()
            .zip(att_shift)
            .map(|(o, s)| OutcomeTruth { outcome: o.name.clone(), ate: o.treatment_effect, att: o.treatment_effect + s })
            .collect(),
    }
}
