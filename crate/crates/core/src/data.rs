//! Two-arm study data: schema, units, arm subsets and CSV I/O.
//!
//! A [`Dataset`] is immutable once built. Categorical covariates are expanded
//! to `k - 1` indicator columns with the lexicographically first level as the
//! reference, so every unit carries a plain real covariate vector.
//!
//! CSV layout: a header row with the reserved columns `id`, `arm` (`RCT` or
//! `NRS`) and `z` (0/1), one column per schema covariate (categoricals hold
//! the level label), and outcome columns prefixed `y_`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("unexpected column `{column}`")]
    UnknownColumn { column: String },
    #[error("row {row}: treatment indicator `z` must be 0 or 1")]
    NonBinaryTreatment { row: usize },
    #[error("row {row}: binary column `{column}` must be 0 or 1")]
    NonBinaryCovariate { row: usize, column: String },
    #[error("row {row}: missing or NaN value in column `{column}`")]
    NaNCell { row: usize, column: String },
    #[error("row {row}: unknown level `{value}` for categorical column `{column}`")]
    UnknownCategoryLevel { row: usize, column: String, value: String },
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: arm must be RCT or NRS, got `{value}`")]
    InvalidArm { row: usize, value: String },
    #[error("row {row}: duplicate unit id {id}")]
    DuplicateId { row: usize, id: i64 },
    #[error("no data rows")]
    MissingData,
    #[error("no units in arm {0}")]
    EmptyArm(Arm),
    #[error("column `{column}`: need at least 2 units per treatment group")]
    TooFewUnits { column: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("unit {id}: {reason}")]
    InvalidUnit { id: i64, reason: String },
    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "RCT")]
    Rct,
    #[serde(rename = "NRS")]
    Nrs,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Rct => "RCT",
            Arm::Nrs => "NRS",
        })
    }
}

impl std::str::FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RCT" => Ok(Arm::Rct),
            "NRS" => Ok(Arm::Nrs),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateRole {
    #[default]
    Covariate,
    CenterIndicator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub name: String,
    pub kind: CovariateKind,
    #[serde(default)]
    pub role: CovariateRole,
}

impl CovariateSchema {
    pub fn continuous(name: &str) -> Self {
        CovariateSchema { name: name.into(), kind: CovariateKind::Continuous, role: CovariateRole::Covariate }
    }

    pub fn binary(name: &str) -> Self {
        CovariateSchema { name: name.into(), kind: CovariateKind::Binary, role: CovariateRole::Covariate }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        CovariateSchema {
            name: name.into(),
            kind: CovariateKind::Categorical { levels: levels.iter().map(|s| s.to_string()).collect() },
            role: CovariateRole::Covariate,
        }
    }

    pub fn center(name: &str) -> Self {
        CovariateSchema { name: name.into(), kind: CovariateKind::Binary, role: CovariateRole::CenterIndicator }
    }

    /// Levels in reference order: the first is the omitted reference level.
    pub fn sorted_levels(&self) -> Option<Vec<String>> {
        match &self.kind {
            CovariateKind::Categorical { levels } => {
                let mut l = levels.clone();
                l.sort();
                Some(l)
            }
            _ => None,
        }
    }
}

/// One column of the expanded covariate matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Column {
    pub name: String,
    /// Index of the schema entry this column was expanded from.
    pub source: usize,
    pub role: CovariateRole,
    /// Level encoded by this indicator, for categorical sources.
    pub level: Option<String>,
    /// Whether values are restricted to {0, 1}.
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: i64,
    pub arm: Arm,
    /// Treatment assignment (true = surgery / treated).
    pub z: bool,
    /// Outcomes, aligned with [`Dataset::outcome_names`].
    pub y: Vec<f64>,
    /// Expanded covariate vector, aligned with [`Dataset::columns`].
    pub x: Vec<f64>,
}

impl Unit {
    pub fn z_f64(&self) -> f64 {
        if self.z {
            1.0
        } else {
            0.0
        }
    }
}

fn expand_schema(schema: &[CovariateSchema]) -> Result<Vec<Column>, DataError> {
    let mut seen = HashSet::new();
    let mut cols = Vec::new();
    for (source, s) in schema.iter().enumerate() {
        if s.name.is_empty() || matches!(s.name.as_str(), "id" | "arm" | "z") || s.name.starts_with("y_") {
            return Err(DataError::Schema(format!("`{}` is a reserved column name", s.name)));
        }
        if !seen.insert(s.name.clone()) {
            return Err(DataError::Schema(format!("duplicate covariate `{}`", s.name)));
        }
        match &s.kind {
            CovariateKind::Continuous | CovariateKind::Binary => cols.push(Column {
                name: s.name.clone(),
                source,
                role: s.role,
                level: None,
                binary: s.kind == CovariateKind::Binary,
            }),
            CovariateKind::Categorical { levels } => {
                let unique: BTreeSet<&String> = levels.iter().collect();
                if levels.len() < 2 || unique.len() != levels.len() {
                    return Err(DataError::Schema(format!(
                        "categorical `{}` needs at least 2 distinct levels",
                        s.name
                    )));
                }
                for level in unique.into_iter().skip(1) {
                    cols.push(Column {
                        name: format!("{}_{}", s.name, level),
                        source,
                        role: s.role,
                        level: Some(level.clone()),
                        binary: true,
                    });
                }
            }
        }
    }
    Ok(cols)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<CovariateSchema>,
    columns: Vec<Column>,
    outcome_names: Vec<String>,
    units: Vec<Unit>,
}

impl Dataset {
    /// Builds a dataset, validating every unit against the expanded schema.
    pub fn new(schema: Vec<CovariateSchema>, outcome_names: Vec<String>, units: Vec<Unit>) -> Result<Self, DataError> {
        let columns = expand_schema(&schema)?;
        let mut names = HashSet::new();
        for o in &outcome_names {
            if !names.insert(o) {
                return Err(DataError::Schema(format!("duplicate outcome `{o}`")));
            }
        }
        let mut ids = HashSet::with_capacity(units.len());
        for (row, u) in units.iter().enumerate() {
            if !ids.insert(u.id) {
                return Err(DataError::DuplicateId { row: row + 1, id: u.id });
            }
            if u.x.len() != columns.len() {
                return Err(DataError::InvalidUnit {
                    id: u.id,
                    reason: format!("covariate vector has {} entries, schema expands to {}", u.x.len(), columns.len()),
                });
            }
            if u.y.len() != outcome_names.len() {
                return Err(DataError::InvalidUnit { id: u.id, reason: "outcome count mismatch".into() });
            }
            if let Some(j) = u.x.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NaNCell { row: row + 1, column: columns[j].name.clone() });
            }
            if let Some(j) = u.y.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NaNCell { row: row + 1, column: outcome_names[j].clone() });
            }
            for (j, c) in columns.iter().enumerate() {
                if c.binary && u.x[j] != 0.0 && u.x[j] != 1.0 {
                    return Err(DataError::NonBinaryCovariate { row: row + 1, column: c.name.clone() });
                }
            }
            for (source, s) in schema.iter().enumerate() {
                if matches!(s.kind, CovariateKind::Categorical { .. }) {
                    let sum: f64 = columns.iter().zip(&u.x).filter(|(c, _)| c.source == source).map(|(_, v)| v).sum();
                    if sum > 1.0 {
                        return Err(DataError::InvalidUnit {
                            id: u.id,
                            reason: format!("more than one level of `{}` set", s.name),
                        });
                    }
                }
            }
        }
        Ok(Dataset { schema, columns, outcome_names, units })
    }

    pub fn schema(&self) -> &[CovariateSchema] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.z).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize, DataError> {
        self.outcome_names
            .iter()
            .position(|o| o == name)
            .ok_or_else(|| DataError::UnknownOutcome(name.to_string()))
    }

    pub fn outcome(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let k = self.outcome_index(name)?;
        Ok(self.units.iter().map(|u| u.y[k]).collect())
    }

    pub fn z(&self) -> Vec<f64> {
        self.units.iter().map(Unit::z_f64).collect()
    }

    pub fn treated(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.z).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_values(&self, j: usize) -> Vec<f64> {
        self.units.iter().map(|u| u.x[j]).collect()
    }

    /// Indices of expanded columns, optionally dropping center indicators.
    pub fn covariate_indices(&self, include_centers: bool) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| include_centers || c.role != CovariateRole::CenterIndicator)
            .map(|(j, _)| j)
            .collect()
    }

    /// `n x p` covariate matrix restricted to `cols`.
    pub fn design(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), cols.len(), |i, j| self.units[i].x[cols[j]])
    }

    /// Full expanded covariate matrix.
    pub fn covariates(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.columns.len(), |i, j| self.units[i].x[j])
    }

    /// Units carrying the given arm tag.
    pub fn arm_subset(&self, arm: Arm) -> Result<Dataset, DataError> {
        let units: Vec<Unit> = self.units.iter().filter(|u| u.arm == arm).cloned().collect();
        if units.is_empty() {
            return Err(DataError::EmptyArm(arm));
        }
        Ok(self.with_units(units))
    }

    /// Units at the given positions, ids preserved.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        self.with_units(indices.iter().map(|&i| self.units[i].clone()).collect())
    }

    /// Units at the given positions (repeats allowed), renumbered `1..=n`.
    pub fn resample(&self, indices: &[usize]) -> Dataset {
        let units = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| Unit { id: k as i64 + 1, ..self.units[i].clone() })
            .collect();
        self.with_units(units)
    }

    /// Concatenates datasets sharing a schema and outcome list.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset, DataError> {
        let first = parts.first().ok_or(DataError::MissingData)?;
        let mut units = Vec::new();
        for p in parts {
            if p.schema != first.schema || p.outcome_names != first.outcome_names {
                return Err(DataError::Schema("cannot concatenate datasets with different schemas".into()));
            }
            units.extend(p.units.iter().cloned());
        }
        Dataset::new(first.schema.clone(), first.outcome_names.clone(), units)
    }

    fn with_units(&self, units: Vec<Unit>) -> Dataset {
        Dataset { schema: self.schema.clone(), columns: self.columns.clone(), outcome_names: self.outcome_names.clone(), units }
    }

    /// Per-column mean, sample sd and count by treatment group.
    pub fn summarize(&self) -> Result<Vec<ColumnSummary>, DataError> {
        let (nt, nc) = (self.n_treated(), self.n_control());
        self.columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if nt < 2 || nc < 2 {
                    return Err(DataError::TooFewUnits { column: c.name.clone() });
                }
                let (t, ctl): (Vec<&Unit>, Vec<&Unit>) = self.units.iter().partition(|u| u.z);
                let t: Vec<f64> = t.iter().map(|u| u.x[j]).collect();
                let ctl: Vec<f64> = ctl.iter().map(|u| u.x[j]).collect();
                Ok(ColumnSummary { column: c.name.clone(), treated: GroupStats::of(&t), control: GroupStats::of(&ctl) })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl GroupStats {
    pub fn of(xs: &[f64]) -> Self {
        GroupStats { mean: stats::mean(xs), sd: stats::sd(xs), n: xs.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub column: String,
    pub treated: GroupStats,
    pub control: GroupStats,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na")
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64, DataError> {
    if is_missing(raw) {
        return Err(DataError::NaNCell { row, column: column.to_string() });
    }
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| DataError::Parse { row, column: column.to_string(), value: raw.to_string() })?;
    if !v.is_finite() {
        return Err(DataError::NaNCell { row, column: column.to_string() });
    }
    Ok(v)
}

/// Reads a CSV file against `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &[CovariateSchema]) -> Result<Dataset, DataError> {
    read_csv(File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &[CovariateSchema]) -> Result<Dataset, DataError> {
    let columns = expand_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    for reserved in ["id", "arm", "z"] {
        if !pos.contains_key(reserved) {
            return Err(DataError::MissingColumn { column: reserved.into() });
        }
    }
    for s in schema {
        if !pos.contains_key(s.name.as_str()) {
            return Err(DataError::MissingColumn { column: s.name.clone() });
        }
    }
    let known: HashSet<&str> = schema.iter().map(|s| s.name.as_str()).collect();
    for h in &header {
        if !(matches!(h.as_str(), "id" | "arm" | "z") || h.starts_with("y_") || known.contains(h.as_str())) {
            return Err(DataError::UnknownColumn { column: h.clone() });
        }
    }
    let outcome_names: Vec<String> = header.iter().filter(|h| h.starts_with("y_")).cloned().collect();
    let levels: Vec<Option<Vec<String>>> = schema.iter().map(CovariateSchema::sorted_levels).collect();

    let mut units = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |name: &str| rec.get(pos[name]).unwrap_or("");
        let id_raw = cell("id");
        let id: i64 = id_raw
            .parse()
            .map_err(|_| DataError::Parse { row, column: "id".into(), value: id_raw.into() })?;
        let arm: Arm = cell("arm").parse().map_err(|value| DataError::InvalidArm { row, value })?;
        let z = match cell("z").parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => return Err(DataError::NonBinaryTreatment { row }),
        };
        let mut x = Vec::with_capacity(columns.len());
        for (source, s) in schema.iter().enumerate() {
            let raw = cell(&s.name);
            match &levels[source] {
                None => {
                    let v = parse_number(raw, row, &s.name)?;
                    if s.kind == CovariateKind::Binary && v != 0.0 && v != 1.0 {
                        return Err(DataError::NonBinaryCovariate { row, column: s.name.clone() });
                    }
                    x.push(v);
                }
                Some(lv) => {
                    if is_missing(raw) {
                        return Err(DataError::NaNCell { row, column: s.name.clone() });
                    }
                    if !lv.iter().any(|l| l == raw) {
                        return Err(DataError::UnknownCategoryLevel { row, column: s.name.clone(), value: raw.into() });
                    }
                    x.extend(lv.iter().skip(1).map(|l| if l == raw { 1.0 } else { 0.0 }));
                }
            }
        }
        let y = outcome_names.iter().map(|o| parse_number(cell(o), row, o)).collect::<Result<Vec<_>, _>>()?;
        units.push(Unit { id, arm, z, y, x });
    }
    if units.is_empty() {
        return Err(DataError::MissingData);
    }
    Dataset::new(schema.to_vec(), outcome_names, units)
}

/// Infers a schema from a CSV header and body: non-numeric columns become
/// categorical, 0/1 columns binary, everything else continuous. Columns whose
/// name starts with `center` are tagged as center indicators.
pub fn infer_schema<R: Read>(reader: R) -> Result<Vec<CovariateSchema>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let cov: Vec<usize> = (0..header.len())
        .filter(|&i| !(matches!(header[i].as_str(), "id" | "arm" | "z") || header[i].starts_with("y_")))
        .collect();
    let mut numeric = vec![true; header.len()];
    let mut binary = vec![true; header.len()];
    let mut values: Vec<BTreeSet<String>> = vec![BTreeSet::new(); header.len()];
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        rows += 1;
        for &i in &cov {
            let raw = rec.get(i).unwrap_or("");
            if is_missing(raw) {
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) => binary[i] &= v == 0.0 || v == 1.0,
                Err(_) => numeric[i] = false,
            }
            if values[i].len() <= 64 {
                values[i].insert(raw.to_string());
            }
        }
    }
    if rows == 0 {
        return Err(DataError::MissingData);
    }
    Ok(cov
        .into_iter()
        .map(|i| {
            let name = header[i].clone();
            let role = if name.starts_with("center") { CovariateRole::CenterIndicator } else { CovariateRole::Covariate };
            let kind = if !numeric[i] {
                CovariateKind::Categorical { levels: values[i].iter().cloned().collect() }
            } else if binary[i] {
                CovariateKind::Binary
            } else {
                CovariateKind::Continuous
            };
            CovariateSchema { name, kind, role }
        })
        .collect())
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Writes the dataset in the CSV layout accepted by [`read_csv`].
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "arm".to_string(), "z".to_string()];
    header.extend(d.schema.iter().map(|s| s.name.clone()));
    header.extend(d.outcome_names.iter().cloned());
    w.write_record(&header)?;
    let levels: Vec<Option<Vec<String>>> = d.schema.iter().map(CovariateSchema::sorted_levels).collect();
    for u in &d.units {
        let mut rec = vec![u.id.to_string(), u.arm.to_string(), if u.z { "1".into() } else { "0".into() }];
        for (source, s) in d.schema.iter().enumerate() {
            let idx: Vec<usize> = (0..d.columns.len()).filter(|&j| d.columns[j].source == source).collect();
            match &levels[source] {
                None => {
                    let v = u.x[idx[0]];
                    rec.push(if s.kind == CovariateKind::Binary { format!("{}", v as i64) } else { fmt_num(v) });
                }
                Some(lv) => {
                    let set = idx.iter().position(|&j| u.x[j] == 1.0);
                    rec.push(match set {
                        Some(k) => lv[k + 1].clone(),
                        None => lv[0].clone(),
                    });
                }
            }
        }
        rec.extend(u.y.iter().map(|&v| fmt_num(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_csv(d, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<CovariateSchema> {
        vec![
            CovariateSchema::continuous("age"),
            CovariateSchema::binary("female"),
            CovariateSchema::categorical("employment", &["working", "retired", "other"]),
        ]
    }

    const CSV: &str = "id,arm,z,age,female,employment,y_qol\n\
        1,RCT,1,45.5,1,working,70\n\
        2,RCT,0,50,0,retired,65.25\n\
        3,NRS,1,39,1,other,80\n\
        4,NRS,0,61.125,0,working,55\n";

    #[test]
    fn categorical_expands_against_first_sorted_level() {
        let d = read_csv(CSV.as_bytes(), &schema()).unwrap();
        let names: Vec<&str> = d.columns().iter().map(|c| c.name.as_str()).collect();
        // Sorted levels: other, retired, working -> `other` is the reference.
        assert_eq!(names, ["age", "female", "employment_retired", "employment_working"]);
        assert_eq!(d.units()[0].x, vec![45.5, 1.0, 0.0, 1.0]);
        assert_eq!(d.units()[2].x, vec![39.0, 1.0, 0.0, 0.0]);
        for u in d.units() {
            let s = u.x[2] + u.x[3];
            assert!(s == 0.0 || s == 1.0);
        }
    }

    #[test]
    fn round_trip_reproduces_cells() {
        let d = read_csv(CSV.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), CSV);
        let again = read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn empty_body_is_missing_data() {
        let err = read_csv("id,arm,z,age,female,employment,y_qol\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, DataError::MissingData));
    }

    #[test]
    fn non_binary_treatment_names_row() {
        let mut s = String::from("id,arm,z,age,female,employment,y_qol\n");
        for i in 1..=8 {
            let z = if i == 7 { 2 } else { i % 2 };
            s.push_str(&format!("{i},NRS,{z},40,0,working,1\n"));
        }
        let err = read_csv(s.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, DataError::NonBinaryTreatment { row: 7 }), "{err}");
    }

    #[test]
    fn errors_name_row_and_column() {
        let nan = "id,arm,z,age,female,employment,y_qol\n1,NRS,1,NaN,0,working,1\n";
        assert!(matches!(
            read_csv(nan.as_bytes(), &schema()).unwrap_err(),
            DataError::NaNCell { row: 1, ref column } if column == "age"
        ));
        let lvl = "id,arm,z,age,female,employment,y_qol\n1,NRS,1,3,0,working,1\n2,NRS,0,3,0,student,1\n";
        assert!(matches!(
            read_csv(lvl.as_bytes(), &schema()).unwrap_err(),
            DataError::UnknownCategoryLevel { row: 2, .. }
        ));
        let missing = "id,arm,z,age,employment,y_qol\n1,NRS,1,3,working,1\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &schema()).unwrap_err(),
            DataError::MissingColumn { ref column } if column == "female"
        ));
    }

    #[test]
    fn arm_subset_partitions_and_is_idempotent() {
        let d = read_csv(CSV.as_bytes(), &schema()).unwrap();
        let rct = d.arm_subset(Arm::Rct).unwrap();
        let nrs = d.arm_subset(Arm::Nrs).unwrap();
        assert_eq!(rct.len() + nrs.len(), d.len());
        assert_eq!(rct.arm_subset(Arm::Rct).unwrap(), rct);
        assert!(matches!(nrs.arm_subset(Arm::Rct), Err(DataError::EmptyArm(Arm::Rct))));
    }

    #[test]
    fn summarize_uses_sample_sd() {
        let schema = vec![CovariateSchema::continuous("a"), CovariateSchema::continuous("k")];
        let units = (0..6)
            .map(|i| Unit {
                id: i,
                arm: Arm::Nrs,
                z: i < 3,
                y: vec![],
                x: vec![[1.0, 2.0, 3.0, 0.0, 0.0, 0.0][i as usize], 5.0],
            })
            .collect();
        let d = Dataset::new(schema, vec![], units).unwrap();
        let s = d.summarize().unwrap();
        assert_eq!(s[0].treated.mean, 2.0);
        assert!((s[0].treated.sd - 1.0).abs() < 1e-15);
        assert_eq!(s[1].control.mean, 5.0);
        assert_eq!(s[1].control.sd, 0.0);
    }

    #[test]
    fn infers_kinds_from_values() {
        let s = infer_schema(CSV.as_bytes()).unwrap();
        assert_eq!(s, schema_sorted());
        fn schema_sorted() -> Vec<CovariateSchema> {
            vec![
                CovariateSchema::continuous("age"),
                CovariateSchema::binary("female"),
                CovariateSchema::categorical("employment", &["other", "retired", "working"]),
            ]
        }
    }
}
