//! `gnngeo`: file-based pipeline stages
//! synth → preprocess → train → geolocate | baseline → evaluate.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 numerical failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use commands::{BaselineArgs, EvaluateArgs, GeolocateArgs, PreprocessArgs, SynthArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "gnngeo", version, about = "Fine-grained IP geolocation from traceroute graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic measurement campaign.
    Synth(SynthArgs),
    /// Build the attributed graph bundle from measurement files.
    Preprocess(PreprocessArgs),
    /// Split landmarks, train (with an optional grid search) and checkpoint.
    Train(TrainArgs),
    /// Predict coordinates with a trained checkpoint.
    Geolocate(GeolocateArgs),
    /// Predict coordinates with SLG, Corr-SLG or MLP-Geo.
    Baseline(BaselineArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug)]
pub enum Failure {
    Data(anyhow::Error),
    Usage(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Data(_) => 1,
            Self::Usage(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Self::Data(e) | Self::Usage(e) | Self::Numeric(e) => e,
        }
    }
}

fn run() -> Result<(), Failure> {
    let argv = config::expand(&Cli::command(), std::env::args().collect())?;
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Geolocate(a) => commands::geolocate(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Evaluate(a) => commands::evaluate(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
