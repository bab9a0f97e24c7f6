//! Method ids and their dispatch to the estimators.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::plugin::{run_plugin, PluginSpec};
use super::BenchmarkError;
use crate::balance::DenominatorPolicy;
use crate::data::Dataset;
use crate::estimate::{EffectEstimate, Estimand};
use crate::learners::{sl_tmle, SuperLearnerConfig};
use crate::matching::{
    bias_corrected_estimate, match_dataset, matched_pair_estimate, post_match_balance, CardinalityConfig, DistanceSpec,
    GreedyOrder, MatchAlgorithm, MatchSpec, Metric,
};
use crate::outcome::{regression_adjustment, regression_adjustment_tau, RegAdjConfig};
use crate::weighting::{aipw, ipw, ipwra, WeightConfig};

/// Branch-and-bound node budget for cardinality matching unless configured;
/// the method is re-run on every bootstrap replicate.
const CARDINALITY_NODES: usize = 50;
/// Relative optimality gap for cardinality matching unless configured.
const CARDINALITY_GAP: f64 = 0.03;
/// Caliper for Mahalanobis matching, in sd of the logit score, unless
/// configured; `"caliper": null` turns it off.
const MD_CALIPER: f64 = 0.2;

/// Table panel a method belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    OutcomeModel,
    TreatmentModel,
    OutcomeAndTreatment,
}

impl Approach {
    pub fn label(self) -> &'static str {
        match self {
            Approach::OutcomeModel => "Outcome Model",
            Approach::TreatmentModel => "Treatment Model",
            Approach::OutcomeAndTreatment => "Outcome and Treatment",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodKind {
    RegAdj(RegAdjConfig),
    Ipw(WeightConfig),
    Aipw,
    Ipwra(WeightConfig),
    PsMatch(MatchSettings),
    NnMatch(MatchSettings),
    MdMatch(MatchSettings),
    CardMatch(CardinalityConfig),
    SlTmle(SuperLearnerConfig),
    Plugin { name: String, spec: PluginSpec },
}

/// Settings shared by the distance-based matching methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSettings {
    pub metric: Option<Metric>,
    pub caliper: Option<f64>,
    pub order: GreedyOrder,
}

impl Default for MatchSettings {
    fn default() -> Self {
        MatchSettings { metric: None, caliper: None, order: GreedyOrder::DataOrder }
    }
}

/// One configured method. `method` is a registry id (`regadj`, `ipw`,
/// `aipw`, `ipwra`, `psmatch`, `nnmatch`, `mdmatch`, `cardmatch`, each
/// optionally suffixed `+ra`, `sl_tmle`, or `plugin:<name>`); `id` names the
/// row and defaults to `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub method: String,
    #[serde(default)]
    pub settings: Value,
    #[serde(default)]
    pub estimand: Option<Estimand>,
    /// Overrides the derived per-method seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl MethodSpec {
    pub fn new(method: &str) -> Self {
        MethodSpec { id: None, method: method.into(), settings: Value::Null, estimand: None, seed: None }
    }

    pub fn named(id: &str, method: &str, settings: Value) -> Self {
        MethodSpec { id: Some(id.into()), method: method.into(), settings, estimand: None, seed: None }
    }

    pub fn method_id(&self) -> &str {
        self.id.as_deref().unwrap_or(&self.method)
    }
}

/// A validated method ready to run.
#[derive(Debug, Clone)]
pub struct Method {
    pub id: String,
    pub kind: MethodKind,
    pub bias_correct: bool,
    pub estimand: Estimand,
    pub approach: Approach,
    pub settings_hash: String,
    pub seed: Option<u64>,
}

fn settings<T: for<'de> Deserialize<'de> + Default>(v: &Value, id: &str) -> Result<T, BenchmarkError> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| BenchmarkError::InvalidConfig(format!("method `{id}`: {e}")))
}

fn hash_settings(method: &str, settings: &Value, estimand: Estimand) -> String {
    // serde_json maps are ordered, so this serialization is canonical.
    let canon = serde_json::json!({ "method": method, "settings": settings, "estimand": estimand });
    let digest = Sha256::digest(canon.to_string().as_bytes());
    hex::encode(&digest[..8])
}

impl Method {
    pub fn parse(spec: &MethodSpec, default_estimand: Estimand) -> Result<Self, BenchmarkError> {
        let id = spec.method_id().to_string();
        let bad = |m: String| BenchmarkError::InvalidConfig(format!("method `{id}`: {m}"));
        if id.is_empty() {
            return Err(BenchmarkError::InvalidConfig("empty method id".into()));
        }
        let (base, bias_correct) = match spec.method.strip_suffix("+ra") {
            Some(b) => (b, true),
            None => (spec.method.as_str(), false),
        };
        let s = &spec.settings;
        let kind = match base {
            "regadj" => MethodKind::RegAdj(settings(s, &id)?),
            "ipw" => MethodKind::Ipw(settings(s, &id)?),
            "aipw" => {
                if !(s.is_null() || s.as_object().is_some_and(|m| m.is_empty())) {
                    return Err(bad("aipw takes no settings".into()));
                }
                MethodKind::Aipw
            }
            "ipwra" => MethodKind::Ipwra(settings(s, &id)?),
            "psmatch" => MethodKind::PsMatch(settings(s, &id)?),
            "nnmatch" => MethodKind::NnMatch(settings(s, &id)?),
            "mdmatch" => {
                let mut m: MatchSettings = settings(s, &id)?;
                if s.get("caliper").is_none() {
                    m.caliper = Some(MD_CALIPER);
                }
                MethodKind::MdMatch(m)
            }
            "cardmatch" => {
                let mut cfg: CardinalityConfig = settings(s, &id)?;
                if s.get("max_nodes").is_none() {
                    cfg.max_nodes = CARDINALITY_NODES;
                }
                if s.get("gap").is_none() {
                    cfg.gap = CARDINALITY_GAP;
                }
                MethodKind::CardMatch(cfg)
            }
            "sl_tmle" => {
                let cfg: SuperLearnerConfig = settings(s, &id)?;
                if cfg.learners.is_empty() || cfg.folds < 2 {
                    return Err(bad("super learner needs at least one learner and two folds".into()));
                }
                for l in &cfg.learners {
                    l.validate().map_err(|e| bad(e.to_string()))?;
                }
                MethodKind::SlTmle(cfg)
            }
            other => match other.strip_prefix("plugin:") {
                Some(name) if !name.is_empty() => {
                    let spec: PluginSpec = serde_json::from_value(s.clone()).map_err(|e| bad(format!("plugin settings: {e}")))?;
                    if spec.command.is_empty() {
                        return Err(bad("plugin command is empty".into()));
                    }
                    MethodKind::Plugin { name: name.into(), spec }
                }
                _ => return Err(bad(format!("unknown method `{}`", spec.method))),
            },
        };
        let matching = matches!(kind, MethodKind::PsMatch(_) | MethodKind::NnMatch(_) | MethodKind::MdMatch(_) | MethodKind::CardMatch(_));
        if bias_correct && !(matching || matches!(kind, MethodKind::Ipw(_))) {
            return Err(bad("`+ra` applies to ipw and the matching methods only".into()));
        }
        if let MethodKind::PsMatch(m) | MethodKind::NnMatch(m) | MethodKind::MdMatch(m) = &kind {
            if m.caliper.is_some_and(|c| !(c > 0.0)) {
                return Err(bad("caliper must be positive".into()));
            }
        }
        if let MethodKind::RegAdj(c) = &kind {
            if c.bootstrap_reps == 1 {
                return Err(bad("bootstrap_reps must be 0 or at least 2".into()));
            }
        }
        let estimand = match (spec.estimand, matching) {
            (Some(Estimand::Ate), true) => return Err(bad("matching estimates the effect on the treated only".into())),
            (_, true) => Estimand::Att,
            (Some(e), false) => e,
            (None, false) => default_estimand,
        };
        let approach = match (&kind, bias_correct) {
            (MethodKind::RegAdj(_), _) => Approach::OutcomeModel,
            (MethodKind::Ipwra(_) | MethodKind::SlTmle(_) | MethodKind::Plugin { .. }, _) | (_, true) => Approach::OutcomeAndTreatment,
            _ => Approach::TreatmentModel,
        };
        let approach = match &kind {
            MethodKind::Plugin { spec, .. } => spec.panel.unwrap_or(approach),
            _ => approach,
        };
        Ok(Method {
            settings_hash: hash_settings(&spec.method, &spec.settings, estimand),
            id,
            kind,
            bias_correct,
            estimand,
            approach,
            seed: spec.seed,
        })
    }

    fn match_spec(&self) -> Option<MatchSpec> {
        let ps = |m: &MatchSettings| DistanceSpec { metric: m.metric.unwrap_or(Metric::PscoreAbsDiff), caliper: m.caliper };
        Some(match &self.kind {
            MethodKind::PsMatch(m) => MatchSpec { algorithm: MatchAlgorithm::Optimal, distance: ps(m) },
            MethodKind::NnMatch(m) => MatchSpec { algorithm: MatchAlgorithm::Greedy { order: m.order }, distance: ps(m) },
            MethodKind::MdMatch(m) => MatchSpec {
                algorithm: MatchAlgorithm::Optimal,
                distance: DistanceSpec { metric: m.metric.unwrap_or(Metric::Mahalanobis), caliper: m.caliper },
            },
            MethodKind::CardMatch(c) => MatchSpec {
                algorithm: MatchAlgorithm::Cardinality(c.clone()),
                distance: DistanceSpec { metric: Metric::Mahalanobis, caliper: None },
            },
            _ => return None,
        })
    }

    /// Runs the method on `d`. With `point == false` only the effect estimate
    /// is needed, so secondary standard-error computations are skipped.
    pub fn run(
        &self,
        d: &Dataset,
        outcome: &str,
        seed: u64,
        point: bool,
        policy: DenominatorPolicy,
    ) -> Result<MethodRun, BenchmarkError> {
        let fail = |e: String| BenchmarkError::MethodFailure { method: self.id.clone(), reason: e };
        let est = self.estimand;
        let mut balance = None;
        let estimate = match &self.kind {
            MethodKind::RegAdj(cfg) => {
                if point {
                    regression_adjustment(d, outcome, est, cfg, seed).map_err(|e| fail(e.to_string()))?
                } else {
                    let tau = regression_adjustment_tau(d, outcome, est, cfg).map_err(|e| fail(e.to_string()))?;
                    EffectEstimate::normal("regadj", est, tau, 0.0, d.len())
                }
            }
            MethodKind::Ipw(cfg) if self.bias_correct => ipwra(d, outcome, est, cfg).map_err(|e| fail(e.to_string()))?,
            MethodKind::Ipw(cfg) => ipw(d, outcome, est, cfg).map_err(|e| fail(e.to_string()))?,
            MethodKind::Aipw => aipw(d, outcome, est).map_err(|e| fail(e.to_string()))?,
            MethodKind::Ipwra(cfg) => ipwra(d, outcome, est, cfg).map_err(|e| fail(e.to_string()))?,
            MethodKind::SlTmle(cfg) => sl_tmle(d, outcome, est, cfg, seed).map_err(|e| fail(e.to_string()))?.0,
            MethodKind::Plugin { name, spec } => run_plugin(name, spec, d, outcome, est, seed).map_err(|e| fail(e.to_string()))?,
            _ => {
                let spec = self.match_spec().expect("matching method");
                let m = match_dataset(d, &spec).map_err(|e| fail(e.to_string()))?;
                if point {
                    let t = post_match_balance(d, &m, policy).map_err(|e| fail(e.to_string()))?;
                    balance = Some(t.max_abs_std_diff());
                }
                let y = d.outcome(outcome).map_err(|e| fail(e.to_string()))?;
                if self.bias_correct {
                    bias_corrected_estimate(&m, d, outcome)
                } else {
                    matched_pair_estimate(&m, &y)
                }
                .map_err(|e| fail(e.to_string()))?
            }
        };
        if !estimate.tau.is_finite() {
            return Err(fail("non-finite effect estimate".into()));
        }
        Ok(MethodRun { estimate: estimate.with_method_id(self.id.clone()), max_abs_std_diff: balance })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRun {
    pub estimate: EffectEstimate,
    /// Largest absolute standardized difference left in the matched sample.
    pub max_abs_std_diff: Option<f64>,
}

/// The sixteen built-in configurations: two regression adjustments, three
/// weighting estimators, AIPW, four matching designs with and without
/// regression bias correction, one Mahalanobis nearest-neighbour match and
/// Super Learner TMLE.
pub fn default_suite() -> Vec<MethodSpec> {
    use serde_json::json;
    vec![
        MethodSpec::new("regadj"),
        MethodSpec::named("regadj_pooled", "regadj", json!({ "pooled": true })),
        MethodSpec::new("ipw"),
        MethodSpec::named("ipw_ht", "ipw", json!({ "normalized": false })),
        MethodSpec::new("aipw"),
        MethodSpec::new("ipwra"),
        MethodSpec::new("psmatch"),
        MethodSpec::new("psmatch+ra"),
        MethodSpec::new("nnmatch"),
        MethodSpec::new("nnmatch+ra"),
        MethodSpec::new("mdmatch"),
        MethodSpec::new("mdmatch+ra"),
        MethodSpec::new("cardmatch"),
        MethodSpec::new("cardmatch+ra"),
        MethodSpec::named("nnmatch_md", "nnmatch", json!({ "metric": "mahalanobis" })),
        MethodSpec::new("sl_tmle"),
    ]
}
