//! `ltv`: train, run and evaluate the thermal pedestrian detector.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltv_core::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "ltv", version, about = "Lightweight thermal pedestrian detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for every random choice (same as `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; must be absent or empty unless `--force`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a manifest and write a checkpoint plus epoch log.
    Train(commands::TrainArgs),
    /// Run a checkpoint over frames and write per-frame detection CSVs.
    Detect(commands::DetectArgs),
    /// Score detections against ground truth.
    Eval(commands::EvalArgs),
    /// Measure end-to-end throughput at one or more resolutions.
    Bench(commands::BenchArgs),
    /// Write augmented copies of frames and their labels.
    Augment(commands::AugmentArgs),
    /// Split a manifest into stratified folds.
    Folds(commands::FoldsArgs),
    /// Print the model summary: parameters, size and FLOPs.
    Inspect(commands::InspectArgs),
    /// Render a synthetic dataset.
    Synth(commands::SynthArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Other => 1,
    }
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("LTV_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("LTV_THREADS=`{v}` is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Detect(a) => commands::detect(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Augment(a) => commands::augment(a),
        Command::Folds(a) => commands::folds(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Synth(a) => commands::synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
