//! `kpod`: fit k-means / k-POD / complete-case k-means from CSV, run the
//! simulation harness, and check the pattern decomposition of the k-POD loss.
//!
//! Exit codes: 0 success, 1 a check failed, 2 invalid input, 3 too few
//! complete cases for the requested k.

mod decomposition;
mod experiment;
mod fit;
mod generate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "kpod", version, about = "k-means and k-POD clustering for incomplete data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one method to a data CSV (and optional 0/1 mask CSV).
    Fit(fit::FitArgs),
    /// Run a table or trend experiment from a JSON config.
    Experiment(experiment::ExperimentArgs),
    /// Compare the k-POD loss with its pattern-weighted decomposition.
    CheckDecomposition(decomposition::CheckArgs),
    /// Sample a preset mixture and mask and write them as CSV.
    Generate(generate::GenerateArgs),
}

/// Error carrying the process exit code.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    pub fn check(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }
}

impl From<kpod_core::Error> for Failure {
    fn from(e: kpod_core::Error) -> Self {
        let code = match e {
            kpod_core::Error::InsufficientData { .. } => 3,
            kpod_core::Error::Io(_) => 1,
            _ => 2,
        };
        Self { code, error: e.into() }
    }
}

pub type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Experiment(args) => experiment::run(args),
        Command::CheckDecomposition(args) => decomposition::run(args),
        Command::Generate(args) => generate::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
