//! Scores observational estimators against a randomized benchmark.
//!
//! Each method runs on the nonrandomized arm and its estimate is compared
//! with the intention-to-treat difference in means from the randomized arm:
//! standardized bias is `(tau_rct - tau_obs) / sd_rct_control`. Its interval
//! comes from a percentile bootstrap that resamples units within each
//! treatment group of each arm and re-runs the whole method per replicate.

mod plugin;
mod registry;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::balance::DenominatorPolicy;
use crate::data::{DataError, Dataset};
use crate::estimate::{EffectEstimate, Estimand, Interval};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::stats;

pub use plugin::{parse_plugin_output, run_plugin, PluginError, PluginSpec};
pub use registry::{default_suite, Approach, MatchSettings, Method, MethodKind, MethodRun, MethodSpec};

/// Replicates allowed to fail before a row is flagged.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("both assignment groups need at least two units with outcome `{outcome}`")]
    DegenerateArm { outcome: String },
    #[error("randomized control outcomes have zero standard deviation")]
    ZeroDenominator,
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("method `{method}` failed: {reason}")]
    MethodFailure { method: String, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctEstimate {
    /// Difference in means by assigned arm with a Welch interval.
    pub estimate: EffectEstimate,
    /// Sample standard deviation of the control-group outcomes.
    pub sd_control: f64,
}

fn itt_parts(y: &[f64], z: &[bool]) -> Option<(f64, f64, f64, f64, f64)> {
    let yt: Vec<f64> = y.iter().zip(z).filter(|(_, &t)| t).map(|(v, _)| *v).collect();
    let yc: Vec<f64> = y.iter().zip(z).filter(|(_, &t)| !t).map(|(v, _)| *v).collect();
    if yt.len() < 2 || yc.len() < 2 {
        return None;
    }
    let (vt, vc) = (stats::variance(&yt) / yt.len() as f64, stats::variance(&yc) / yc.len() as f64);
    let df_den = vt * vt / (yt.len() - 1) as f64 + vc * vc / (yc.len() - 1) as f64;
    let df = if df_den > 0.0 { (vt + vc).powi(2) / df_den } else { f64::INFINITY };
    Some((stats::mean(&yt) - stats::mean(&yc), (vt + vc).sqrt(), df, stats::sd(&yc), yc.len() as f64))
}

/// Intention-to-treat estimate: difference in outcome means by assigned arm.
pub fn rct_itt_estimate(rct: &Dataset, outcome: &str) -> Result<RctEstimate, BenchmarkError> {
    let y = rct.outcome(outcome)?;
    let (tau, se, df, sd_control, _) =
        itt_parts(&y, &rct.treated()).ok_or_else(|| BenchmarkError::DegenerateArm { outcome: outcome.into() })?;
    let q = if df.is_finite() {
        StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(0.975)).unwrap_or(stats::Z_95)
    } else {
        stats::Z_95
    };
    let estimate = EffectEstimate {
        method_id: "rct_itt".into(),
        estimand: Estimand::Ate,
        tau,
        se,
        ci: Interval::new(tau - q * se, tau + q * se),
        n_used: rct.len(),
    };
    Ok(RctEstimate { estimate, sd_control })
}

pub fn standardized_bias(tau_rct: f64, tau_obs: f64, sd_rct_control: f64) -> Result<f64, BenchmarkError> {
    if !(sd_rct_control > 0.0 && sd_rct_control.is_finite()) {
        return Err(BenchmarkError::ZeroDenominator);
    }
    Ok((tau_rct - tau_obs) / sd_rct_control)
}

/// Interval length plus squared bias.
pub fn mse_metric(bias_std: f64, ci: Interval) -> f64 {
    debug_assert!(ci.hi >= ci.lo);
    (ci.hi - ci.lo) + bias_std * bias_std
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// The bias interval covers zero.
    #[serde(rename = "ok")]
    Star,
    /// Significantly biased.
    #[serde(rename = "BIASED")]
    X,
}

impl Verdict {
    pub fn from_interval(ci: Interval) -> Self {
        if ci.contains(0.0) {
            Verdict::Star
        } else {
            Verdict::X
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Verdict::Star => "★",
            Verdict::X => "X",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Star => "ok",
            Verdict::X => "BIASED",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub reps: usize,
    /// Defaults to a stream derived from the run seed.
    pub seed: Option<u64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { reps: 1000, seed: None }
    }
}

fn default_methods() -> Vec<MethodSpec> {
    default_suite()
}

fn default_policy() -> DenominatorPolicy {
    DenominatorPolicy::ControlSd
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    /// Outcomes to score; empty means every outcome present in both arms.
    #[serde(default)]
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub seed: u64,
    /// Estimand for methods that support both; matching always targets the treated.
    #[serde(default)]
    pub estimand: Estimand,
    /// Denominator for post-match balance diagnostics.
    #[serde(default = "default_policy")]
    pub denominator_policy: DenominatorPolicy,
    /// Worker threads; `None` uses every available core. Does not affect results.
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            methods: default_suite(),
            outcomes: Vec::new(),
            bootstrap: BootstrapConfig::default(),
            seed: 0,
            estimand: Estimand::Ate,
            denominator_policy: default_policy(),
            jobs: None,
        }
    }
}

impl BenchmarkConfig {
    pub fn parse_methods(&self) -> Result<Vec<Method>, BenchmarkError> {
        if self.methods.is_empty() {
            return Err(BenchmarkError::InvalidConfig("at least one method is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            if !seen.insert(m.method_id()) {
                return Err(BenchmarkError::InvalidConfig(format!("duplicate method id `{}`", m.method_id())));
            }
        }
        self.methods.iter().map(|m| Method::parse(m, self.estimand)).collect()
    }

    pub fn validate(&self) -> Result<Vec<Method>, BenchmarkError> {
        if self.bootstrap.reps < 100 {
            return Err(BenchmarkError::InvalidConfig("bootstrap.reps must be at least 100".into()));
        }
        if self.jobs == Some(0) {
            return Err(BenchmarkError::InvalidConfig("jobs must be at least 1".into()));
        }
        self.parse_methods()
    }

    fn bootstrap_seed(&self) -> u64 {
        self.bootstrap.seed.unwrap_or_else(|| derive_seed(self.seed, &[tag("bootstrap")]))
    }

    fn method_seed(&self, m: &Method) -> u64 {
        m.seed.unwrap_or_else(|| derive_seed(self.seed, &[tag("method"), tag(&m.id)]))
    }
}

/// Bootstrap interval for the standardized bias of one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCi {
    pub interval: Interval,
    pub replicates: usize,
    pub failures: usize,
    /// More than 5% of replicates failed.
    pub flagged: bool,
}

/// Resamples units with replacement within each treatment group.
fn stratified_resample(d: &Dataset, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let z = d.treated();
    let mut idx = Vec::with_capacity(d.len());
    for arm in [true, false] {
        let g: Vec<usize> = (0..d.len()).filter(|&i| z[i] == arm).collect();
        if g.is_empty() {
            continue;
        }
        idx.extend((0..g.len()).map(|_| g[rng.random_range(0..g.len())]));
    }
    d.resample(&idx)
}

fn rct_replicate(rct: &Dataset, outcome: &str, boot_seed: u64, b: usize) -> Option<(f64, f64)> {
    let r = stratified_resample(rct, derive_seed(boot_seed, &[tag("rct"), b as u64]));
    let y = r.outcome(outcome).ok()?;
    let (tau, _, _, sd, _) = itt_parts(&y, &r.treated())?;
    (sd > 0.0).then_some((tau, sd))
}

fn nrs_replicate(
    m: &Method,
    nrs: &Dataset,
    outcome: &str,
    boot_seed: u64,
    method_seed: u64,
    b: usize,
    policy: DenominatorPolicy,
) -> Option<f64> {
    let r = stratified_resample(nrs, derive_seed(boot_seed, &[tag("nrs"), b as u64]));
    m.run(&r, outcome, derive_seed(method_seed, &[tag("replicate"), b as u64]), false, policy)
        .ok()
        .map(|run| run.estimate.tau)
}

fn percentile_interval(mut v: Vec<f64>) -> Interval {
    v.sort_by(f64::total_cmp);
    Interval::new(stats::quantile_sorted(&v, 0.025), stats::quantile_sorted(&v, 0.975))
}

fn summarize_replicates(method: &str, draws: &[Option<f64>]) -> Result<BiasCi, BenchmarkError> {
    let ok: Vec<f64> = draws.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(BenchmarkError::MethodFailure { method: method.into(), reason: "fewer than two bootstrap replicates succeeded".into() });
    }
    let failures = draws.len() - ok.len();
    Ok(BiasCi {
        interval: percentile_interval(ok),
        replicates: draws.len(),
        failures,
        flagged: failures as f64 > MAX_FAILURE_RATE * draws.len() as f64,
    })
}

/// Percentile bootstrap interval of the standardized bias of `method`, with
/// replicate `b` seeded from `seed`.
pub fn bias_ci(method: &Method, rct: &Dataset, nrs: &Dataset, outcome: &str, reps: usize, seed: u64) -> Result<BiasCi, BenchmarkError> {
    if reps < 100 {
        return Err(BenchmarkError::InvalidConfig("at least 100 bootstrap replicates are required".into()));
    }
    let draws: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let (tau_rct, sd) = rct_replicate(rct, outcome, seed, b)?;
            let tau_obs = nrs_replicate(method, nrs, outcome, seed, derive_seed(seed, &[tag(&method.id)]), b, DenominatorPolicy::ControlSd)?;
            standardized_bias(tau_rct, tau_obs, sd).ok()
        })
        .collect();
    summarize_replicates(&method.id, &draws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    #[serde(flatten)]
    pub estimate: EffectEstimate,
    pub outcome: String,
    pub approach: Approach,
    pub settings_hash: String,
    pub seed: u64,
    pub std_bias: f64,
    pub std_bias_ci: Interval,
    pub mse: f64,
    pub verdict: Verdict,
    pub replicates: usize,
    pub failed_replicates: usize,
    /// More than 5% of bootstrap replicates failed.
    pub flagged: bool,
    /// Largest absolute standardized difference in the matched sample.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_abs_std_diff: Option<f64>,
}

impl BenchmarkRow {
    pub fn method_id(&self) -> &str {
        &self.estimate.method_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method_id: String,
    pub outcome: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctSummary {
    pub outcome: String,
    #[serde(flatten)]
    pub itt: RctEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    #[serde(rename = "B")]
    pub bootstrap_reps: usize,
    pub bootstrap_seed: u64,
    pub version: String,
    pub estimand: Estimand,
    pub outcomes: Vec<String>,
    pub rct: Vec<RctSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub meta: ReportMeta,
    /// Grouped by approach, then in configuration order, then by outcome.
    pub rows: Vec<BenchmarkRow>,
    #[serde(default)]
    pub failures: Vec<MethodFailure>,
}

impl BenchmarkReport {
    pub fn row(&self, method_id: &str, outcome: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method_id() == method_id && r.outcome == outcome)
    }
}

fn shared_outcomes(config: &BenchmarkConfig, rct: &Dataset, nrs: &Dataset) -> Result<Vec<String>, BenchmarkError> {
    let outcomes: Vec<String> = if config.outcomes.is_empty() {
        nrs.outcome_names().iter().filter(|o| rct.outcome_names().contains(o)).cloned().collect()
    } else {
        config.outcomes.clone()
    };
    if outcomes.is_empty() {
        return Err(BenchmarkError::InvalidConfig("no outcome is shared by both arms".into()));
    }
    for o in &outcomes {
        rct.outcome_index(o)?;
        nrs.outcome_index(o)?;
    }
    Ok(outcomes)
}

enum Task {
    Point { o: usize, m: usize },
    Replicate { o: usize, m: usize, b: usize },
}

enum TaskResult {
    Point(Result<MethodRun, BenchmarkError>),
    Replicate(Option<f64>),
}

/// Runs every configured method on `nrs` and scores it against `rct`. Method
/// failures are recorded in the report and do not stop the run. The report
/// depends only on the data, the configuration and its seeds.
pub fn run_benchmark(config: &BenchmarkConfig, rct: &Dataset, nrs: &Dataset) -> Result<BenchmarkReport, BenchmarkError> {
    let methods = config.validate()?;
    let outcomes = shared_outcomes(config, rct, nrs)?;
    let reps = config.bootstrap.reps;
    let boot_seed = config.bootstrap_seed();
    let policy = config.denominator_policy;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = config.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| BenchmarkError::InvalidConfig(format!("thread pool: {e}")))?;

    let rct_point = outcomes.iter().map(|o| rct_itt_estimate(rct, o)).collect::<Result<Vec<_>, _>>()?;
    for r in &rct_point {
        if !(r.sd_control > 0.0) {
            return Err(BenchmarkError::ZeroDenominator);
        }
    }

    let mut tasks = Vec::new();
    for o in 0..outcomes.len() {
        for m in 0..methods.len() {
            tasks.push(Task::Point { o, m });
            tasks.extend((0..reps).map(|b| Task::Replicate { o, m, b }));
        }
    }
    let (rct_reps, results): (Vec<Vec<Option<(f64, f64)>>>, Vec<TaskResult>) = pool.install(|| {
        let rct_reps = outcomes
            .iter()
            .map(|o| (0..reps).into_par_iter().map(|b| rct_replicate(rct, o, boot_seed, b)).collect())
            .collect();
        let results = tasks
            .par_iter()
            .map(|t| match *t {
                Task::Point { o, m } => TaskResult::Point(methods[m].run(nrs, &outcomes[o], config.method_seed(&methods[m]), true, policy)),
                Task::Replicate { o, m, b } => {
                    TaskResult::Replicate(nrs_replicate(&methods[m], nrs, &outcomes[o], boot_seed, config.method_seed(&methods[m]), b, policy))
                }
            })
            .collect();
        (rct_reps, results)
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut it = results.into_iter();
    for (o, outcome) in outcomes.iter().enumerate() {
        let rct_est = &rct_point[o];
        for m in &methods {
            let point = match it.next() {
                Some(TaskResult::Point(p)) => p,
                _ => unreachable!("task order"),
            };
            let draws: Vec<Option<f64>> = (0..reps)
                .map(|b| match it.next() {
                    Some(TaskResult::Replicate(tau_obs)) => {
                        let (tau_rct, sd) = rct_reps[o][b]?;
                        standardized_bias(tau_rct, tau_obs?, sd).ok()
                    }
                    _ => unreachable!("task order"),
                })
                .collect();
            let run = match point {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{}: {e}", m.id);
                    failures.push(MethodFailure { method_id: m.id.clone(), outcome: outcome.clone(), error: e.to_string() });
                    continue;
                }
            };
            let ci = match summarize_replicates(&m.id, &draws) {
                Ok(ci) => ci,
                Err(e) => {
                    failures.push(MethodFailure { method_id: m.id.clone(), outcome: outcome.clone(), error: e.to_string() });
                    continue;
                }
            };
            if ci.flagged {
                log::warn!("{} on {outcome}: {} of {} bootstrap replicates failed", m.id, ci.failures, ci.replicates);
            }
            let std_bias = standardized_bias(rct_est.estimate.tau, run.estimate.tau, rct_est.sd_control)?;
            rows.push((
                m.approach,
                BenchmarkRow {
                    estimate: run.estimate,
                    outcome: outcome.clone(),
                    approach: m.approach,
                    settings_hash: m.settings_hash.clone(),
                    seed: config.method_seed(m),
                    std_bias,
                    std_bias_ci: ci.interval,
                    mse: mse_metric(std_bias, ci.interval),
                    verdict: Verdict::from_interval(ci.interval),
                    replicates: ci.replicates,
                    failed_replicates: ci.failures,
                    flagged: ci.flagged,
                    max_abs_std_diff: run.max_abs_std_diff,
                },
            ));
        }
    }
    // Stable sort keeps configuration order within each panel; outcomes
    // become the innermost key.
    let order: Vec<&str> = methods.iter().map(|m| m.id.as_str()).collect();
    rows.sort_by_key(|(a, r)| (*a, order.iter().position(|id| *id == r.method_id()).unwrap_or(usize::MAX)));
    Ok(BenchmarkReport {
        meta: ReportMeta {
            seed: config.seed,
            bootstrap_reps: reps,
            bootstrap_seed: boot_seed,
            version: env!("CARGO_PKG_VERSION").into(),
            estimand: config.estimand,
            outcomes: outcomes.clone(),
            rct: outcomes.iter().cloned().zip(rct_point).map(|(outcome, itt)| RctSummary { outcome, itt }).collect(),
        },
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        failures,
    })
}
