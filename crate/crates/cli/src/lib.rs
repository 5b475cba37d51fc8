//! Command-line front end: CSV ingestion, run configuration and the
//! `simulate`, `estimate`, `bias` and `oracle-check` subcommands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use config::RunConfig;
pub use data::{load_csv, write_dataset, ColumnManifest, LoadedData};
pub use error::{CliError, Result};
pub use report::{Format, Report, Table, SCHEMA_VERSION};

pub fn execute(config: &RunConfig) -> Result<Vec<PathBuf>> {
    use config::Command::*;
    match &config.command {
        Simulate(a) => commands::cmd_simulate(a),
        Estimate(a) => commands::cmd_estimate(a),
        Bias(a) => commands::cmd_bias(a),
        OracleCheck(a) => commands::cmd_oracle_check(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&config) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
