//! Crate-level error wrapping each module's error type.

use thiserror::Error;

use crate::balance::BalanceError;
use crate::benchmark::{BenchmarkError, PluginError};
use crate::data::DataError;
use crate::learners::LearnerError;
use crate::matching::MatchingError;
use crate::outcome::OutcomeError;
use crate::propensity::PropensityError;
use crate::synthgen::SynthError;
use crate::weighting::WeightingError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
