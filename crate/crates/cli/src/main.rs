//! `qudit`: run qutrit characterization experiments and write CSV/JSON artifacts.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<qudit_core::Error> for CliError {
    fn from(e: qudit_core::Error) -> Self {
        match e {
            qudit_core::Error::Validation(_) | qudit_core::Error::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "qudit", version, about = "Qutrit gate synthesis, benchmarking and tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file of experiment settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ExperimentConfig,
}

#[derive(Subcommand)]
enum Command {
    /// Givens decomposition of gates, a matrix file or Haar-random unitaries.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// JSON file holding a unitary as rows of [re, im] pairs.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Number of Haar-random qutrit unitaries.
        #[arg(long)]
        random: Option<usize>,
    },
    /// All 216 qutrit Clifford elements with their pulse decompositions.
    CliffordTable(Common),
    /// Randomized benchmarking: rb.csv, rb_fit.json.
    Rb(Common),
    /// Fit an existing rb.csv.
    RbFit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Process tomography of one gate: chi.json, qpt_summary.json.
    Qpt(Common),
    /// Populations after repeated application of one gate: repeat.csv.
    Repeat(Common),
    /// Level shift and rotation error against drive strength.
    HeffSweep(Common),
    /// Calibrate transfer factors, pulse amplitudes and IQ phases.
    Calibrate(Common),
    /// Check a configuration without running anything.
    Validate(Common),
}

fn resolve(common: &Common) -> Result<ExperimentConfig, CliError> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::Validation)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.merged(&common.flags))
}

fn init_threads(config: &ExperimentConfig) -> Result<(), CliError> {
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let common = match &cli.command {
        Command::Decompose { common, .. } | Command::RbFit { common, .. } => common,
        Command::CliffordTable(c)
        | Command::Rb(c)
        | Command::Qpt(c)
        | Command::Repeat(c)
        | Command::HeffSweep(c)
        | Command::Calibrate(c)
        | Command::Validate(c) => c,
    };
    let config = resolve(common)?;
    init_threads(&config)?;
    match &cli.command {
        Command::Decompose { matrix, random, .. } => commands::decompose_cmd(&config, matrix.as_deref(), *random)?,
        Command::CliffordTable(_) => commands::clifford_table_cmd(&config)?,
        Command::Rb(_) => commands::rb_cmd(&config)?,
        Command::RbFit { input, .. } => commands::rb_fit_cmd(&config, input)?,
        Command::Qpt(_) => commands::qpt_cmd(&config)?,
        Command::Repeat(_) => commands::repeat_cmd(&config)?,
        Command::HeffSweep(_) => commands::heff_sweep_cmd(&config)?,
        Command::Calibrate(_) => commands::calibrate_cmd(&config)?,
        Command::Validate(_) => return Ok(commands::validate_cmd(&config)),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
