//! Experiment runner for rmflab: configuration, seeded generation and report emission.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use config::{Enumeration, Generator, Overrides};
pub use error::CliError;
pub use report::{Format, Output, REPORT_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Rbound,
    Randnorm,
    Typecotype,
    Maximal,
    RmfRatio,
    Reduce,
    Gundy,
    Goodlambda,
    WeakRmf,
    Concave,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "rmflab", version, about = "Seeded experiments on R-bounds and Rademacher maximal functions")]
pub struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; required here or in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Largest sign count enumerated exactly; Monte Carlo beyond it
    #[arg(long)]
    pub exact_threshold: Option<usize>,
    /// Monte Carlo sample count
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Starts per R-bound ratio search
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Relative convergence tolerance of the ratio ascent
    #[arg(long)]
    pub tol: Option<f64>,
}

impl Args {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            exact_threshold: self.exact_threshold,
            mc_samples: self.mc_samples,
            restarts: self.restarts,
            tol: self.tol,
        }
    }
}

/// Runs the experiment and returns the rendered report with any failed invariants.
pub fn execute(args: &Args) -> Result<Output, CliError> {
    let overrides = args.overrides();
    let ctx = experiments::Ctx { config: args.config.as_deref(), overrides: &overrides, format: args.format };
    match args.experiment {
        Experiment::Rbound => experiments::rbound(&ctx),
        Experiment::Randnorm => experiments::randnorm(&ctx),
        Experiment::Typecotype => experiments::typecotype(&ctx),
        Experiment::Maximal => experiments::maximal(&ctx),
        Experiment::RmfRatio => experiments::rmf_ratio_cmd(&ctx),
        Experiment::Reduce => experiments::reduce(&ctx),
        Experiment::Gundy => experiments::gundy(&ctx),
        Experiment::Goodlambda => experiments::goodlambda(&ctx),
        Experiment::WeakRmf => experiments::weak_rmf(&ctx),
        Experiment::Concave => experiments::concave(&ctx),
    }
}

/// Executes, writes the report, and fails afterwards if any invariant was violated.
pub fn run(args: &Args) -> Result<(), CliError> {
    let out = execute(args)?;
    match &args.out {
        Some(path) => std::fs::write(path, &out.bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout().write_all(&out.bytes).map_err(|e| CliError::Io(e.to_string()))?,
    }
    if out.violations.is_empty() {
        Ok(())
    } else {
        let experiment = args.experiment.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        Err(CliError::Violations { experiment, failed: out.violations })
    }
}
