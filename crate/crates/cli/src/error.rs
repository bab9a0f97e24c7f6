use std::path::PathBuf;

use causal_bench_core::benchmark::BenchmarkError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config file {} does not exist", .0.display())]
    ConfigNotFound(PathBuf),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("input file {} does not exist", .0.display())]
    FileNotFound(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{0}")]
    MethodFailed(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Stable identifier printed after `code:` on standard error.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::ConfigNotFound(_) => "CONFIG_NOT_FOUND",
            CliError::ConfigInvalid(_) => "CONFIG_INVALID",
            CliError::FileNotFound(_) => "FILE_NOT_FOUND",
            CliError::Usage(_) => "USAGE",
            CliError::Data(_) => "DATA_INVALID",
            CliError::MethodFailed(_) => "METHOD_FAILED",
            CliError::Io { .. } => "IO_ERROR",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MethodFailed(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<BenchmarkError> for CliError {
    fn from(e: BenchmarkError) -> Self {
        match e {
            BenchmarkError::InvalidConfig(m) => CliError::ConfigInvalid(m),
            BenchmarkError::MethodFailure { .. } => CliError::MethodFailed(e.to_string()),
            BenchmarkError::DegenerateArm { .. } | BenchmarkError::ZeroDenominator | BenchmarkError::Data(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<causal_bench_core::data::DataError> for CliError {
    fn from(e: causal_bench_core::data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}
