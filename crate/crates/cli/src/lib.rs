//! Command-line driver: `gen`, `balance`, `estimate`, `benchmark` and `report`.
//!
//! Every command writes its outputs atomically and records a `run_meta.json`
//! with the configuration hash, seeds and version next to its main output.

pub mod error;
pub mod io;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use causal_bench_core::balance::balance_table;
use causal_bench_core::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport, Method, MethodSpec};
use causal_bench_core::data::{write_csv, Arm, CovariateSchema, Dataset};
use causal_bench_core::rng::{derive_seed, tag};
use causal_bench_core::synthgen::{self, DgpConfig};
use causal_bench_core::{DenominatorPolicy, Estimand};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use error::CliError;
use io::{check_outputs, load_dataset, load_schema, read_bytes, to_json, write_atomic, RunMeta};
use report::{Format, Layout};

#[derive(Debug, Parser)]
#[command(name = "causal-bench", version, about = "Benchmark observational treatment-effect estimators against a randomized arm")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic randomized arm and self-selected arm with known effects.
    Gen(GenArgs),
    /// Covariate balance table for one dataset.
    Balance(BalanceArgs),
    /// Run one method on one dataset.
    Estimate(EstimateArgs),
    /// Score methods on the self-selected arm against the randomized arm.
    Benchmark(BenchmarkArgs),
    /// Render a results file as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    RefluxLike,
    RefluxLikeNonlinear,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// Generator configuration as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_rct: PathBuf,
    #[arg(long)]
    pub out_nrs: PathBuf,
    /// Ground-truth effects as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Covariate schema as JSON, for reading the CSVs back without inference.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableFormat {
    Json,
    Csv,
    Md,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Restrict to one arm of a combined file.
    #[arg(long)]
    pub arm: Option<Arm>,
    #[arg(long, default_value = "pooled_sd")]
    pub policy: DenominatorPolicy,
    #[arg(long, value_enum, default_value = "json")]
    pub format: TableFormat,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Registry id such as `ipw`, `nnmatch+ra` or `plugin:name`.
    #[arg(long)]
    pub method: String,
    /// Method settings as inline JSON.
    #[arg(long)]
    pub settings: Option<String>,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub estimand: Option<Estimand>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "control_sd")]
    pub policy: DenominatorPolicy,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Benchmark configuration as JSON; the built-in suite when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rct: Option<PathBuf>,
    #[arg(long)]
    pub nrs: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub estimand: Option<Estimand>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    pub format: Format,
    #[arg(long, value_enum, default_value = "rows")]
    pub layout: Layout,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// File locations that may be given in a benchmark config under `io`.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoPaths {
    pub rct: Option<PathBuf>,
    pub nrs: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// A benchmark configuration file: [`BenchmarkConfig`] plus optional `io` paths.
pub fn parse_run_config(bytes: &[u8]) -> Result<(BenchmarkConfig, IoPaths), CliError> {
    let invalid = |e: serde_json::Error| CliError::ConfigInvalid(e.to_string());
    let mut v: serde_json::Value = serde_json::from_slice(bytes).map_err(invalid)?;
    let io = match v.as_object_mut().and_then(|o| o.remove("io")) {
        Some(io) => serde_json::from_value(io).map_err(invalid)?,
        None => IoPaths::default(),
    };
    Ok((serde_json::from_value(v).map_err(invalid)?, io))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn csv_bytes(d: &Dataset) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_csv(d, &mut buf)?;
    Ok(buf)
}

fn schema_arg(path: Option<&Path>) -> Result<Option<Vec<CovariateSchema>>, CliError> {
    path.map(load_schema).transpose()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Balance(a) => cmd_balance(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Report(a) => cmd_report(a),
    }
}

pub fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let mut cfg: DgpConfig = match (&a.config, a.preset) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(CliError::ConfigNotFound(path.clone()));
            }
            serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::ConfigInvalid(e.to_string()))?
        }
        (None, Some(Preset::RefluxLike)) => synthgen::reflux_like(0),
        (None, Some(Preset::RefluxLikeNonlinear)) => synthgen::reflux_like_nonlinear(0),
        (None, None) => return Err(CliError::Usage("gen needs --preset or --config".into())),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut outputs: Vec<&Path> = vec![&a.out_rct, &a.out_nrs];
    outputs.extend(a.truth.as_deref());
    outputs.extend(a.schema.as_deref());
    let inputs: Vec<&Path> = a.config.as_deref().into_iter().collect();
    check_outputs(&inputs, &outputs)?;
    let data = synthgen::generate(&cfg).map_err(|e| match e {
        synthgen::SynthError::InvalidConfig(m) => CliError::ConfigInvalid(m),
        other => CliError::Data(other.to_string()),
    })?;
    write_atomic(&a.out_rct, &csv_bytes(&data.rct)?)?;
    write_atomic(&a.out_nrs, &csv_bytes(&data.nrs)?)?;
    if let Some(p) = &a.truth {
        write_atomic(p, &to_json(&data.truth))?;
    }
    if let Some(p) = &a.schema {
        write_atomic(p, &to_json(&data.rct.schema()))?;
    }
    let mut meta = RunMeta::new("gen", &cfg);
    meta.seeds.insert("seed".into(), cfg.seed);
    if let Some(c) = &a.config {
        meta.input(c)?;
    }
    meta.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    meta.write(Some(&a.out_rct))?;
    Ok(())
}

pub fn cmd_balance(a: BalanceArgs) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        check_outputs(&[&a.data], &[o])?;
    }
    let schema = schema_arg(a.schema.as_deref())?;
    let mut d = load_dataset(&a.data, schema.as_deref())?;
    if let Some(arm) = a.arm {
        d = d.arm_subset(arm)?;
    }
    let table = balance_table(&d, None, a.policy).map_err(|e| CliError::Data(e.to_string()))?;
    let bytes = match a.format {
        TableFormat::Json => to_json(&table),
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["covariate", "mean_t", "mean_c", "std_diff", "p_value"]).map_err(|e| CliError::Data(e.to_string()))?;
            for r in &table.rows {
                let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                w.write_record([r.covariate.clone(), r.mean_t.to_string(), r.mean_c.to_string(), opt(r.std_diff), opt(r.p_value)])
                    .map_err(|e| CliError::Data(e.to_string()))?;
            }
            w.into_inner().map_err(|e| CliError::Data(e.to_string()))?
        }
        TableFormat::Md => {
            let mut s = String::from("| Covariate | Treated | Control | Std. diff | p |\n| --- | --- | --- | --- | --- |\n");
            for r in &table.rows {
                let opt = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.2}"));
                s += &format!("| {} | {:.2} | {:.2} | {} | {} |\n", r.covariate, r.mean_t, r.mean_c, opt(r.std_diff), opt(r.p_value));
            }
            s.into_bytes()
        }
    };
    emit(a.out.as_deref(), &bytes)?;
    let mut meta = RunMeta::new("balance", &serde_json::json!({ "policy": a.policy, "arm": a.arm }));
    meta.input(&a.data)?;
    meta.outputs = a.out.iter().map(|p| p.display().to_string()).collect();
    meta.write(a.out.as_deref())?;
    Ok(())
}

pub fn cmd_estimate(a: EstimateArgs) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        check_outputs(&[&a.data], &[o])?;
    }
    let settings = match &a.settings {
        Some(s) => serde_json::from_str(s).map_err(|e| CliError::ConfigInvalid(format!("--settings: {e}")))?,
        None => serde_json::Value::Null,
    };
    let spec = MethodSpec { id: None, method: a.method.clone(), settings, estimand: a.estimand, seed: None };
    let method = Method::parse(&spec, a.estimand.unwrap_or_default())?;
    let schema = schema_arg(a.schema.as_deref())?;
    let d = load_dataset(&a.data, schema.as_deref())?;
    d.outcome_index(&a.outcome)?;
    let seed = derive_seed(a.seed, &[tag("method"), tag(&method.id)]);
    let run = method.run(&d, &a.outcome, seed, true, a.policy)?;
    emit(a.out.as_deref(), &to_json(&run))?;
    let mut meta = RunMeta::new("estimate", &spec);
    meta.seeds.insert("seed".into(), a.seed);
    meta.seeds.insert(method.id.clone(), seed);
    meta.input(&a.data)?;
    meta.outputs = a.out.iter().map(|p| p.display().to_string()).collect();
    meta.write(a.out.as_deref())?;
    Ok(())
}

pub fn cmd_benchmark(a: BenchmarkArgs) -> Result<(), CliError> {
    let (mut cfg, io) = match &a.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::ConfigNotFound(path.clone()));
            }
            parse_run_config(&read_bytes(path)?)?
        }
        None => (BenchmarkConfig::default(), IoPaths::default()),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.estimand {
        cfg.estimand = e;
    }
    if let Some(b) = a.bootstrap_reps {
        cfg.bootstrap.reps = b;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    let rct = a.rct.or(io.rct).ok_or_else(|| CliError::Usage("benchmark needs --rct".into()))?;
    let nrs = a.nrs.or(io.nrs).ok_or_else(|| CliError::Usage("benchmark needs --nrs".into()))?;
    let schema_path = a.schema.or(io.schema);
    let out = a.out.or(io.out);
    let mut inputs: Vec<&Path> = vec![&rct, &nrs];
    inputs.extend(schema_path.as_deref());
    inputs.extend(a.config.as_deref());
    for p in &inputs {
        io::require_file(p)?;
    }
    if let Some(o) = &out {
        check_outputs(&inputs, &[o])?;
    }
    let methods = cfg.validate()?;

    let schema = schema_arg(schema_path.as_deref())?;
    let rct_d = load_dataset(&rct, schema.as_deref())?;
    let nrs_d = load_dataset(&nrs, schema.as_deref())?;
    for (d, arm, p) in [(&rct_d, Arm::Rct, &rct), (&nrs_d, Arm::Nrs, &nrs)] {
        if d.units().iter().any(|u| u.arm != arm) {
            log::warn!("{} contains units outside the {arm} arm", p.display());
        }
    }
    log::info!("benchmarking {} methods, B = {}", methods.len(), cfg.bootstrap.reps);
    let report = run_benchmark(&cfg, &rct_d, &nrs_d)?;
    emit(out.as_deref(), &to_json(&report))?;

    let mut meta = RunMeta::new("benchmark", &cfg);
    meta.seeds.insert("seed".into(), cfg.seed);
    meta.seeds.insert("bootstrap".into(), report.meta.bootstrap_seed);
    let mut method_seeds = BTreeMap::new();
    for r in &report.rows {
        method_seeds.insert(format!("method:{}", r.method_id()), r.seed);
    }
    meta.seeds.extend(method_seeds);
    for p in &inputs {
        meta.input(p)?;
    }
    meta.outputs = out.iter().map(|p| p.display().to_string()).collect();
    meta.write(out.as_deref())?;

    if !report.failures.is_empty() {
        let names: Vec<String> = report.failures.iter().map(|f| format!("{} ({})", f.method_id, f.outcome)).collect();
        return Err(CliError::MethodFailed(format!("methods failed: {}", names.join(", "))));
    }
    Ok(())
}

pub fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        check_outputs(&[&a.input], &[o])?;
    }
    let report: BenchmarkReport =
        serde_json::from_slice(&read_bytes(&a.input)?).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let text = report::render(&report, a.format, a.layout)?;
    emit(a.out.as_deref(), text.as_bytes())?;
    let fmt = match a.format {
        Format::Md => "md",
        Format::Csv => "csv",
    };
    let mut meta = RunMeta::new("report", &serde_json::json!({ "format": fmt, "layout": format!("{:?}", a.layout) }));
    meta.seeds.insert("seed".into(), report.meta.seed);
    meta.input(&a.input)?;
    meta.outputs = a.out.iter().map(|p| p.display().to_string()).collect();
    meta.write(a.out.as_deref())?;
    Ok(())
}
