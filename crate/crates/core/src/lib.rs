//! Treatment-effect estimation and randomized-benchmark scoring.
//!
//! The crate is organised around the pipeline used to judge observational
//! adjustment methods against a randomized trial:
//!
//! * [`data`] holds two-arm study data (`RCT` and `NRS` units) and CSV I/O.
//! * [`balance`] computes standardized differences and balance tables.
//! * [`propensity`], [`outcome`], [`weighting`], [`matching`] and
//!   [`learners`] implement the estimators.
//! * [`benchmark`] scores each estimator against the trial's ITT estimate.
//! * [`synthgen`] produces seeded two-arm data with known ground truth.

pub mod balance;
pub mod benchmark;
pub mod data;
pub mod error;
pub mod estimate;
pub mod learners;
pub mod linalg;
pub mod matching;
pub mod outcome;
pub mod propensity;
pub mod rng;
pub mod stats;
pub mod synthgen;
pub mod weighting;

pub use balance::{BalanceRow, BalanceTable, DenominatorPolicy};
pub use benchmark::{BenchmarkConfig, BenchmarkReport, BenchmarkRow, Verdict};
pub use data::{Arm, CovariateKind, CovariateRole, CovariateSchema, Dataset, Unit};
pub use error::{Error, Result};
pub use estimate::{EffectEstimate, Estimand, Interval};
pub use matching::MatchResult;
