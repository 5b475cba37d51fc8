//! Tabular command output and its readers.
//!
//! A [`Report`] is a set of named tables plus run metadata. As JSON it is
//! written whole; as CSV the first table goes to the requested path and
//! every other table to `<stem>.<table>.csv` beside it.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Cell of the first row whose first column equals `key`.
    pub fn lookup(&self, key: &str, column: &str) -> Option<&Value> {
        let c = self.column(column)?;
        self.rows
            .iter()
            .find(|r| r.first().and_then(Value::as_str) == Some(key))
            .map(|r| &r[c])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(format_cell))?;
        }
        w.flush().map_err(|e| CliError::io("<csv output>", e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, name: &str) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let mut table = Self::new(name, columns);
        for record in r.records() {
            table.rows.push(record?.iter().map(parse_cell).collect());
        }
        Ok(table)
    }
}

/// A float cell; non-finite values become empty.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

/// A text cell; empty strings become empty cells so CSV reads them back alike.
pub fn note(s: Option<String>) -> Value {
    s.filter(|s| !s.is_empty()).map_or(Value::Null, Value::String)
}

fn format_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_cell(s: &str) -> Value {
    if s.is_empty() {
        return Value::Null;
    }
    if let Ok(b) = s.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(u) = s.parse::<u64>() {
        return Value::from(u);
    }
    if let Ok(i) = s.parse::<i64>() {
        return Value::from(i);
    }
    match s.parse::<f64>() {
        Ok(f) if f.is_finite() => num(f),
        _ => Value::String(s.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub meta: Map<String, Value>,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            meta: Map::new(),
            tables: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl Into<Value>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes the report and returns the files created.
    pub fn write(&self, path: &Path, format: Format) -> Result<Vec<PathBuf>> {
        match format {
            Format::Json => {
                let mut bytes = serde_json::to_vec_pretty(self)?;
                bytes.push(b'\n');
                std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
                Ok(vec![path.to_path_buf()])
            }
            Format::Csv => {
                let mut written = Vec::new();
                for (i, t) in self.tables.iter().enumerate() {
                    let p = if i == 0 {
                        path.to_path_buf()
                    } else {
                        sibling(path, &t.name)
                    };
                    let f = std::fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
                    t.write_csv(f)?;
                    written.push(p);
                }
                Ok(written)
            }
        }
    }

    pub fn print(&self, format: Format) -> Result<()> {
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        let io = |e| CliError::io("<stdout>", e);
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut out, self)?;
                writeln!(out).map_err(io)?;
            }
            Format::Csv => {
                for (i, t) in self.tables.iter().enumerate() {
                    if self.tables.len() > 1 {
                        if i > 0 {
                            writeln!(out).map_err(io)?;
                        }
                        writeln!(out, "# {}", t.name).map_err(io)?;
                    }
                    t.write_csv(&mut out)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// `dir/stem.<suffix>.csv` for `dir/stem.ext`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}
