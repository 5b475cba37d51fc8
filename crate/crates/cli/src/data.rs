//! CSV datasets: comma-separated, mandatory header row, `.` decimals.

use std::collections::HashSet;
use std::path::Path;

use ivkit::DesignData;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Name given to the generated intercept column.
pub const INTERCEPT: &str = "intercept";

/// Cells read as missing. Rows holding one in a referenced column are dropped.
const MISSING: [&str; 5] = ["", "NA", "N/A", "NaN", "."];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnManifest {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub controls: Vec<String>,
    pub instruments: Vec<String>,
    /// Prepend a column of ones to the controls.
    pub add_intercept: bool,
}

impl ColumnManifest {
    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() {
            return Err(CliError::Usage("an outcome column is required".into()));
        }
        if self.endogenous.is_empty() {
            return Err(CliError::Usage("at least one endogenous column is required".into()));
        }
        if self.instruments.len() < self.endogenous.len() {
            return Err(CliError::Usage(format!(
                "{} instruments for {} endogenous regressors",
                self.instruments.len(),
                self.endogenous.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in self.referenced() {
            if !seen.insert(name) {
                return Err(CliError::Usage(format!("column `{name}` is assigned twice")));
            }
        }
        if self.add_intercept && seen.contains(INTERCEPT) {
            return Err(CliError::Usage(format!(
                "column `{INTERCEPT}` clashes with the generated intercept"
            )));
        }
        Ok(())
    }

    fn referenced(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.outcome.as_str())
            .chain(self.endogenous.iter().map(String::as_str))
            .chain(self.controls.iter().map(String::as_str))
            .chain(self.instruments.iter().map(String::as_str))
    }

    /// Coefficient names in raw-mode order: endogenous, then controls.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = self.endogenous.clone();
        if self.add_intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(self.controls.iter().cloned());
        names
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: DesignData,
    /// One-based data-row numbers (header excluded) that were dropped.
    pub dropped_rows: Vec<usize>,
}

fn parse_cell(cell: &str, column: &str, row: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if MISSING.iter().any(|m| m.eq_ignore_ascii_case(cell)) {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| CliError::NonNumeric {
        column: column.to_string(),
        row,
        value: cell.to_string(),
    })?;
    Ok(v.is_finite().then_some(v))
}

pub fn load_csv(path: &Path, manifest: &ColumnManifest) -> Result<LoadedData> {
    manifest.validate()?;
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let cols: Vec<(String, usize)> = manifest
        .referenced()
        .map(|name| index(name).map(|i| (name.to_string(), i)))
        .collect::<Result<_>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped_rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let mut values = Vec::with_capacity(cols.len());
        let mut complete = true;
        for (name, i) in &cols {
            match parse_cell(record.get(*i).unwrap_or(""), name, row)? {
                Some(v) => values.push(v),
                None => complete = false,
            }
        }
        if complete {
            rows.push(values);
        } else {
            dropped_rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(CliError::NoUsableRows {
            dropped: dropped_rows.len(),
        });
    }

    let n = rows.len();
    let l1 = manifest.endogenous.len();
    let l2 = manifest.controls.len();
    let k1 = manifest.instruments.len();
    let block = |offset: usize, width: usize| DMatrix::from_fn(n, width, |i, j| rows[i][offset + j]);
    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let x = block(1, l1);
    let mut w = block(1 + l1, l2);
    if manifest.add_intercept {
        w = w.insert_column(0, 1.0);
    }
    let z = block(1 + l1 + l2, k1);
    let data = DesignData::new(y, x, w, z)?;
    Ok(LoadedData { data, dropped_rows })
}

/// Writes `data` with columns `y, x1.., w1.., z1..` and returns the manifest
/// that reads it back.
pub fn write_dataset(path: &Path, data: &DesignData) -> Result<ColumnManifest> {
    let named = |prefix: &str, k: usize| (1..=k).map(|j| format!("{prefix}{j}")).collect::<Vec<_>>();
    let manifest = ColumnManifest {
        outcome: "y".into(),
        endogenous: named("x", data.l1()),
        controls: named("w", data.l2()),
        instruments: named("z", data.k1()),
        add_intercept: false,
    };
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(manifest.referenced())?;
    for i in 0..data.n() {
        let mut row = vec![data.y()[i].to_string()];
        for block in [data.x_star(), data.w(), data.z_star()] {
            row.extend(block.row(i).iter().map(f64::to_string));
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))?;
    Ok(manifest)
}
