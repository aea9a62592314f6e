//! Command-line driver: `grid`, `sweep`, `validate` and `compare`.
//!
//! Exit codes: 0 success, 1 a validation or invariant check failed, 2 bad
//! configuration or arguments, 3 the run aborted.

// `!(x > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use tpe_core::validation::Level;

use config::{FileConfig, Overrides, QuadratureArg, SectorArg, Settings, OUT_DIR_ENV};

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run aborted: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tpe", version, about = "Remote qubit entanglement by two-photon dissipation: outcome planes, fidelity sweeps and validation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Amplitude of mode a (for `sweep`: a single α = β point).
    #[arg(long, global = true, value_name = "F")]
    pub alpha: Option<f64>,
    /// Amplitude of mode b.
    #[arg(long, global = true, value_name = "F")]
    pub beta: Option<f64>,
    /// Detection efficiency (for `sweep`: a single η point).
    #[arg(long, global = true, value_name = "F")]
    pub eta: Option<f64>,
    /// Parity sector (default: both for `grid`, even otherwise).
    #[arg(long, global = true, value_enum)]
    pub sector: Option<SectorArg>,
    /// Homodyne quadrature (default: both for `grid`, Y otherwise).
    #[arg(long, global = true, value_enum)]
    pub quadrature: Option<QuadratureArg>,
    /// Trajectories per stochastic point.
    #[arg(long, global = true, value_name = "M")]
    pub trajectories: Option<usize>,
    /// Worker thread cap.
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,
    /// Output directory (default: $TPE_OUT_DIR, else ./tpe-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic outcome planes: probability, Bell overlap, concurrence, |∇F|.
    Grid,
    /// Stochastic maximum-fidelity sweep over α = β and η.
    Sweep,
    /// Run the validation suites.
    Validate {
        /// Structural invariants only (the default).
        #[arg(long, conflicts_with = "full")]
        quick: bool,
        /// Add the adiabatic-elimination, parity-lobe, outcome-plane,
        /// fidelity and ensemble checks (tens of minutes).
        #[arg(long)]
        full: bool,
    },
    /// Compare the analytic and stochastic paths on binned outcomes.
    Compare,
}

/// Parse `args`, run, print the report; returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tpe: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        seed: cli.seed,
        alpha: cli.alpha,
        beta: cli.beta,
        eta: cli.eta,
        sector: cli.sector,
        quadrature: cli.quadrature,
        trajectories: cli.trajectories,
        threads: cli.threads,
        out: cli.out.clone(),
    };
    let env_out = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let settings = Settings::resolve(&file, &flags, env_out)?;
    let (name, level) = match &cli.command {
        Command::Grid => ("grid", Level::Quick),
        Command::Sweep => ("sweep", Level::Quick),
        Command::Compare => ("compare", Level::Quick),
        Command::Validate { full, .. } => ("validate", if *full { Level::Full } else { Level::Quick }),
    };
    let finished = commands::execute(name, &settings, level)?;
    for line in &finished.lines {
        println!("{line}");
    }
    let failed: Vec<&str> = finished.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
