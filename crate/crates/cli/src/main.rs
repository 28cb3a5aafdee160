//! `btl`: reproducible experiments with stochastic triplet embeddings.

mod commands;
mod config;
mod manifest;

use clap::{ArgAction, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "btl", version, about = "Bayesian triplet embeddings: oracles, training and evaluation")]
pub struct Cli {
    /// JSON config for the subcommand; a manifest from an earlier run is accepted too.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (falls back to the config file, then BTL_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare the Gaussian approximation of τ with its exact distribution.
    SimulateApprox(commands::simulate::Args),
    /// Finite-difference audit of every analytic gradient.
    Gradcheck(commands::gradcheck::Args),
    /// Train an encoder on the synthetic dataset.
    Train(commands::train::Args),
    /// Embed a dataset split with a trained checkpoint.
    Embed(commands::embed::Args),
    /// Retrieval, calibration and OOD metrics from embedding files.
    Eval(commands::eval::Args),
}

/// Shared run settings.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let g = Globals { config: cli.config, seed: cli.seed, threads: cli.threads };
    let result = match cli.command {
        Command::SimulateApprox(a) => commands::simulate::run(&g, a),
        Command::Gradcheck(a) => commands::gradcheck::run(&g, a),
        Command::Train(a) => commands::train::run(&g, a),
        Command::Embed(a) => commands::embed::run(&g, a),
        Command::Eval(a) => commands::eval::run(&g, a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Result of a command that ran to completion. Usage and input errors are
/// reported through `Err` instead.
pub enum Outcome {
    Success,
    /// An analytic check failed or training diverged; outputs were written.
    Failed,
}
