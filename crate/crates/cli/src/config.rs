//! Command-line configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ivkit::design::DEFAULT_BA_THRESHOLD;
use ivkit::montecarlo::SimDesign;
use ivkit::oracle::OracleShape;
use ivkit::NamedEstimator;

use crate::data::ColumnManifest;
use crate::error::{CliError, Result};
use crate::report::Format;

/// Environment variable read for the default worker-thread count.
pub const THREADS_ENV: &str = "IVKIT_THREADS";

#[derive(Debug, Clone, Parser)]
#[command(name = "ivkit", version, about = "C-matrix IV estimators, bias coefficients and Monte Carlo replication")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run a seeded Monte Carlo design and summarize bias, variance and MSE.
    Simulate(SimulateArgs),
    /// Estimate a dataset with one or more named estimators.
    Estimate(EstimateArgs),
    /// Bias coefficients and leverage diagnostics for a dataset or design.
    Bias(BiasArgs),
    /// Compare closed-form JIVE1 with its leave-one-out definition.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignName {
    #[value(name = "table4-setup1")]
    Table4Setup1,
    #[value(name = "table4-setup2")]
    Table4Setup2,
    #[value(name = "table5-setup1")]
    Table5Setup1,
    #[value(name = "table5-setup2")]
    Table5Setup2,
    Outlier,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    #[arg(long, value_enum)]
    pub design: Option<DesignName>,
    /// Sample size of the outlier design (1 plus a square, at least 26).
    #[arg(long)]
    pub n: Option<usize>,
    /// Swap the "+"/"−" covariance assignment of the group designs.
    #[arg(long)]
    pub flip_groups: bool,
    /// Add an intercept control to the outlier design.
    #[arg(long)]
    pub outlier_intercept: bool,
}

impl DesignArgs {
    pub fn build(&self) -> Result<Option<SimDesign>> {
        let Some(name) = self.design else {
            if self.n.is_some() || self.flip_groups || self.outlier_intercept {
                return Err(CliError::Usage("design flags given without --design".into()));
            }
            return Ok(None);
        };
        if self.n.is_some() && name != DesignName::Outlier {
            return Err(CliError::Usage("--n applies to the outlier design only".into()));
        }
        if self.flip_groups && !matches!(name, DesignName::Table5Setup1 | DesignName::Table5Setup2) {
            return Err(CliError::Usage("--flip-groups applies to the table5 designs only".into()));
        }
        if self.outlier_intercept && name != DesignName::Outlier {
            return Err(CliError::Usage("--outlier-intercept applies to the outlier design only".into()));
        }
        let design = match name {
            DesignName::Table4Setup1 => SimDesign::homoskedastic_setup(1)?,
            DesignName::Table4Setup2 => SimDesign::homoskedastic_setup(2)?,
            DesignName::Table5Setup1 => SimDesign::group_het(1, self.flip_groups)?,
            DesignName::Table5Setup2 => SimDesign::group_het(2, self.flip_groups)?,
            DesignName::Outlier => {
                let mut d = SimDesign::outlier(self.n.unwrap_or(101))?;
                if let SimDesign::Outlier(o) = &mut d {
                    o.intercept = self.outlier_intercept;
                }
                d
            }
        };
        Ok(Some(design))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 1000)]
    pub rounds: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Comma-separated estimator names; the design's table by default.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<NamedEstimator>,
    /// Also write `<stem>.estimates.csv` and `<stem>.density.csv`.
    #[arg(long)]
    pub keep_estimates: bool,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub endogenous: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub controls: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub instruments: Vec<String>,
    /// Prepend an intercept to the controls.
    #[arg(long)]
    pub intercept: bool,
}

impl DatasetArgs {
    pub fn given(&self) -> bool {
        self.data.is_some()
    }

    pub fn manifest(&self) -> Result<(PathBuf, ColumnManifest)> {
        let path = self
            .data
            .clone()
            .ok_or_else(|| CliError::Usage("--data is required".into()))?;
        let outcome = self
            .outcome
            .clone()
            .ok_or_else(|| CliError::Usage("--outcome is required with --data".into()))?;
        let manifest = ColumnManifest {
            outcome,
            endogenous: self.endogenous.clone(),
            controls: self.controls.clone(),
            instruments: self.instruments.clone(),
            add_intercept: self.intercept,
        };
        manifest.validate()?;
        Ok((path, manifest))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Divisor {
    #[default]
    N,
    #[value(name = "n-minus-l")]
    NMinusL,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Comma-separated estimator names; all fourteen by default.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<NamedEstimator>,
    /// Divisor of the residual variance.
    #[arg(long, value_enum, default_value_t = Divisor::N)]
    pub divisor: Divisor,
    /// Leverage margin below which a row is flagged.
    #[arg(long, default_value_t = DEFAULT_BA_THRESHOLD)]
    pub ba_threshold: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    /// Seed of the single draw taken from `--design`.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<NamedEstimator>,
    #[arg(long, default_value_t = DEFAULT_BA_THRESHOLD)]
    pub ba_threshold: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = OracleShape::default().n)]
    pub n: usize,
    #[arg(long, default_value_t = OracleShape::default().l1)]
    pub l1: usize,
    #[arg(long, default_value_t = OracleShape::default().l2)]
    pub l2: usize,
    #[arg(long, default_value_t = OracleShape::default().k1)]
    pub k1: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl OracleArgs {
    pub fn shape(&self) -> OracleShape {
        OracleShape {
            n: self.n,
            l1: self.l1,
            l2: self.l2,
            k1: self.k1,
        }
    }
}

pub fn check_threshold(t: f64) -> Result<()> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("BA threshold must lie in [0, 1), got {t}")))
    }
}
