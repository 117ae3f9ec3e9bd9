//! `spikein` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data.
    Usage(String),
    Runtime(String),
    Lib(spikein::Error),
}

impl From<spikein::Error> for CliError {
    fn from(e: spikein::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_validation() => 1,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Lib(spikein::Error::MissingPropensity(id)) => write!(
                f,
                "subject {id:?} has no propensity score; add an `e` column or run `spikein fit-propensity` first"
            ),
            CliError::Lib(spikein::Error::MissingPrognostic(id)) => write!(
                f,
                "subject {id:?} has no prognostic score; add a `prog` column or run `spikein fit-prognostic` first"
            ),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "spikein",
    version,
    about = "Treatment effects from an observational database with a randomized trial spiked in"
)]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation grid and write its MSE table.
    Simulate(commands::SimulateArgs),
    /// Fit a propensity model on the ODB and score every subject.
    FitPropensity(commands::FitArgs),
    /// Fit a prognostic model on ODB controls and score every subject.
    FitPrognostic(commands::FitArgs),
    /// Build the propensity strata and write the plan.
    Stratify(commands::StratifyArgs),
    /// Standardized differences before and after stratification.
    Balance(commands::BalanceArgs),
    /// Estimate the ODB average treatment effect.
    Estimate(commands::EstimateArgs),
    /// Bootstrap comparison of the estimators against a reference effect.
    Bootstrap(commands::BootstrapArgs),
    /// Render the tables in an output directory.
    Report(commands::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::empty(),
    };
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(config.layer("simulate", a)?),
        Command::FitPropensity(a) => commands::fit(config.layer("fit-propensity", a)?, commands::FitKind::Propensity),
        Command::FitPrognostic(a) => commands::fit(config.layer("fit-prognostic", a)?, commands::FitKind::Prognostic),
        Command::Stratify(a) => commands::stratify(config.layer("stratify", a)?),
        Command::Balance(a) => commands::balance(config.layer("balance", a)?),
        Command::Estimate(a) => commands::estimate(config.layer("estimate", a)?),
        Command::Bootstrap(a) => commands::bootstrap(config.layer("bootstrap", a)?),
        Command::Report(a) => commands::report(config.layer("report", a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
