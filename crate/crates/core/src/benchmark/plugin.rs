//! External estimators run as child processes.
//!
//! The child receives the path of a CSV copy of the nonrandomized data as its
//! last argument, plus `CAUSAL_BENCH_OUTCOME`, `CAUSAL_BENCH_ESTIMAND` and
//! `CAUSAL_BENCH_SEED` in its environment, and prints one line `tau,se`.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::Approach;
use crate::data::{write_csv, DataError, Dataset};
use crate::estimate::{EffectEstimate, Estimand};

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("plugin `{name}` could not be started: {source}")]
    Spawn { name: String, source: std::io::Error },
    #[error("plugin `{name}` exited with {status}: {stderr}")]
    NonzeroExit { name: String, status: String, stderr: String },
    #[error("plugin `{name}` printed `{line}`, expected `tau,se`")]
    ParseError { name: String, line: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginSpec {
    /// Program and leading arguments.
    pub command: Vec<String>,
    /// Table panel for the plugin's rows; defaults to outcome and treatment.
    #[serde(default)]
    pub panel: Option<Approach>,
}

/// Parses the first non-empty line of `stdout` as `tau,se`.
pub fn parse_plugin_output(name: &str, stdout: &str) -> Result<(f64, f64), PluginError> {
    let line = stdout.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let err = || PluginError::ParseError { name: name.into(), line: line.into() };
    let mut parts = line.split(',').map(str::trim);
    let tau: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
    let se: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
    if parts.next().is_some() || !tau.is_finite() || !(se >= 0.0 && se.is_finite()) {
        return Err(err());
    }
    Ok((tau, se))
}

pub fn run_plugin(
    name: &str,
    spec: &PluginSpec,
    d: &Dataset,
    outcome: &str,
    estimand: Estimand,
    seed: u64,
) -> Result<EffectEstimate, PluginError> {
    let mut file = tempfile::Builder::new().prefix("causal-bench-").suffix(".csv").tempfile()?;
    write_csv(d, &mut file)?;
    file.flush()?;
    let output = Command::new(&spec.command[0])
        .args(&spec.command[1..])
        .arg(file.path())
        .env("CAUSAL_BENCH_OUTCOME", outcome)
        .env("CAUSAL_BENCH_ESTIMAND", estimand.to_string())
        .env("CAUSAL_BENCH_SEED", seed.to_string())
        .stdin(Stdio::null())
        .output()
        .map_err(|source| PluginError::Spawn { name: name.into(), source })?;
    if !output.status.success() {
        return Err(PluginError::NonzeroExit {
            name: name.into(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let (tau, se) = parse_plugin_output(name, &String::from_utf8_lossy(&output.stdout))?;
    Ok(EffectEstimate::normal(format!("plugin:{name}"), estimand, tau, se, d.len()))
}
