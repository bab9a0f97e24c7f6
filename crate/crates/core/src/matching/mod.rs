//! One-to-one matching without replacement: greedy nearest neighbour, optimal
//! pair matching and cardinality matching, plus matched-sample estimators.

mod assignment;
mod cardinality;
mod distance;
mod estimate;
mod greedy;
pub mod lp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::BalanceError;
use crate::data::{DataError, Dataset};
use crate::outcome::OutcomeError;
use crate::propensity::{fit_propensity, IrlsConfig, PropensityError};

pub use assignment::{min_cost_assignment, optimal_pair_match};
pub use cardinality::{
    cardinality_match, default_constraints, select_balanced, BalanceConstraint, CardinalityConfig, Selection,
};
pub use distance::{distance_matrix, DistanceMatrix, DistanceSpec, Metric};
pub use estimate::{bias_corrected_estimate, matched_pair_estimate, post_match_balance};
pub use greedy::{greedy_nn_match, GreedyOrder};

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("covariance matrix is singular even after ridge repair")]
    SingularCovariance,
    #[error("metric or caliper needs propensity scores")]
    MissingPropensity,
    #[error("need at least 2 matched pairs, have {0}")]
    TooFewPairs(usize),
    #[error("no nonempty subset satisfies the balance constraints")]
    Infeasible,
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("invalid matching configuration: {0}")]
    InvalidConfig(String),
    #[error("matched sample failed its audit: {0}")]
    AuditFailed(String),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Row indices into the matched dataset.
    pub treated_row: usize,
    pub control_row: usize,
    pub treated_id: i64,
    pub control_id: i64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by treated id.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_treated: Vec<i64>,
    /// Sum of pair distances.
    pub objective: f64,
    /// Set when a solver stopped at its node or time limit and returned its
    /// best incumbent.
    pub hit_limit: bool,
}

impl MatchResult {
    pub(crate) fn from_pairs(dm: &DistanceMatrix, mut assigned: Vec<(usize, usize)>) -> Self {
        assigned.sort_by_key(|&(t, _)| dm.treated_ids[t]);
        let mut matched = vec![false; dm.n_treated()];
        let pairs: Vec<MatchedPair> = assigned
            .into_iter()
            .map(|(t, c)| {
                matched[t] = true;
                MatchedPair {
                    treated_row: dm.treated[t],
                    control_row: dm.control[c],
                    treated_id: dm.treated_ids[t],
                    control_id: dm.control_ids[c],
                    distance: dm.values[(t, c)],
                }
            })
            .collect();
        let mut unmatched_treated: Vec<i64> = (0..dm.n_treated()).filter(|&t| !matched[t]).map(|t| dm.treated_ids[t]).collect();
        unmatched_treated.sort_unstable();
        MatchResult { objective: pairs.iter().map(|p| p.distance).sum(), pairs, unmatched_treated, hit_limit: false }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks one-to-one use of units and finite pair distances.
    pub fn audit(&self) -> Result<(), MatchingError> {
        let mut seen_t = std::collections::HashSet::new();
        let mut seen_c = std::collections::HashSet::new();
        for p in &self.pairs {
            if !p.distance.is_finite() {
                return Err(MatchingError::AuditFailed(format!("pair ({}, {}) violates the caliper", p.treated_id, p.control_id)));
            }
            if !seen_t.insert(p.treated_row) || !seen_c.insert(p.control_row) {
                return Err(MatchingError::AuditFailed(format!("unit reused in pair ({}, {})", p.treated_id, p.control_id)));
            }
        }
        Ok(())
    }

    /// Writes `treated_id,control_id,distance`.
    pub fn write_pairs_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["treated_id", "control_id", "distance"])?;
        for p in &self.pairs {
            out.write_record([p.treated_id.to_string(), p.control_id.to_string(), p.distance.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Matching algorithm and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum MatchAlgorithm {
    Greedy { order: GreedyOrder },
    Optimal,
    Cardinality(CardinalityConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub algorithm: MatchAlgorithm,
    /// Ignored by cardinality matching, which always pairs on Mahalanobis distance.
    pub distance: DistanceSpec,
}

/// Runs a matching specification on a dataset, fitting a main-effects
/// propensity model when the metric or caliper needs one.
pub fn match_dataset(d: &Dataset, spec: &MatchSpec) -> Result<MatchResult, MatchingError> {
    let result = match &spec.algorithm {
        MatchAlgorithm::Cardinality(cfg) => {
            let constraints = default_constraints(d, cfg.threshold);
            cardinality_match(d, &constraints, cfg)?
        }
        algo => {
            let scores = if spec.distance.needs_scores() {
                Some(fit_propensity(d, &d.covariate_indices(true), &IrlsConfig::default())?.scores)
            } else {
                None
            };
            let dm = distance_matrix(d, &spec.distance, scores.as_deref())?;
            match algo {
                MatchAlgorithm::Greedy { order } => greedy_nn_match(&dm, *order),
                _ => optimal_pair_match(&dm),
            }
        }
    };
    result.audit()?;
    Ok(result)
}
