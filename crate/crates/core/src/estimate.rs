//! Effect estimates shared by every estimator.

use serde::{Deserialize, Serialize};

use crate::stats::Z_95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    /// Average treatment effect over the whole population.
    #[default]
    Ate,
    /// Average treatment effect among the treated.
    Att,
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimand::Ate => "ate",
            Estimand::Att => "att",
        })
    }
}

impl std::str::FromStr for Estimand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "att" => Ok(Estimand::Att),
            other => Err(format!("unknown estimand `{other}` (expected ate or att)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// A point estimate with its standard error and 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method_id: String,
    pub estimand: Estimand,
    pub tau: f64,
    pub se: f64,
    pub ci: Interval,
    pub n_used: usize,
}

impl EffectEstimate {
    /// Wald interval `tau +/- 1.96 se`.
    pub fn normal(method_id: impl Into<String>, estimand: Estimand, tau: f64, se: f64, n_used: usize) -> Self {
        EffectEstimate {
            method_id: method_id.into(),
            estimand,
            tau,
            se,
            ci: Interval::new(tau - Z_95 * se, tau + Z_95 * se),
            n_used,
        }
    }

    pub fn with_method_id(mut self, id: impl Into<String>) -> Self {
        self.method_id = id.into();
        self
    }
}
