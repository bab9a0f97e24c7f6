//! File handling: atomic writes, input checks and run metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use causal_bench_core::data::{infer_schema, read_csv, CovariateSchema, Dataset};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::FileNotFound(path.to_path_buf()))
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    require_file(path)?;
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Writes `bytes` to a temporary file in the destination directory and
/// renames it over `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.flush().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("serializable value");
    s.push(b'\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rejects outputs that would overwrite one of the inputs.
pub fn check_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    for o in outputs {
        let Some(co) = canon(o) else { continue };
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&co)) {
            return Err(CliError::Usage(format!("output {} would overwrite an input", o.display())));
        }
    }
    Ok(())
}

pub fn load_schema(path: &Path) -> Result<Vec<CovariateSchema>, CliError> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads a dataset against `schema`, inferring one from the file when absent.
pub fn load_dataset(path: &Path, schema: Option<&[CovariateSchema]>) -> Result<Dataset, CliError> {
    let bytes = read_bytes(path)?;
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = infer_schema(bytes.as_slice())?;
            &inferred
        }
    };
    read_csv(bytes.as_slice(), schema).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunMeta {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        let canonical = serde_json::to_vec(&serde_json::to_value(config).expect("serializable config")).expect("json");
        RunMeta {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(&canonical),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), sha256_hex(&read_bytes(path)?));
        Ok(())
    }

    /// Writes `run_meta.json` next to `primary`, or into the working
    /// directory when the primary output went to standard output.
    pub fn write(&self, primary: Option<&Path>) -> Result<PathBuf, CliError> {
        let dir = primary.and_then(Path::parent).filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let path = dir.join("run_meta.json");
        write_atomic(&path, &to_json(self))?;
        Ok(path)
    }
}
