//! `gmot` — offline multi-object tracking over MOT-format text files.
//!
//! Subcommands cover the whole desk workflow: `simulate` writes a synthetic
//! scene, `track` runs the tracker over a detection file, `eval` scores a
//! result against ground truth, `train-stmp` fits the trajectory predictor
//! on ground-truth tracks, and `bench` runs the feature-flag ablation
//! benchmark. Every command is deterministic given its inputs, flags, and
//! seeds, and echoes enough configuration next to its outputs to reproduce
//! the run.

mod bench;
mod eval;
mod files;
mod simulate;
mod track;
mod train_stmp;

use clap::{Parser, Subcommand};
use gmot_core::config::ConfigError;

#[derive(Parser)]
#[command(name = "gmot", version, about = "group-aware multi-object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracker over a detection file
    Track(track::Args),
    /// Score a tracking result against ground truth
    Eval(eval::Args),
    /// Generate a synthetic scene: gt.txt, det.txt, scene.config
    Simulate(simulate::Args),
    /// Train the trajectory predictor on ground-truth tracks
    TrainStmp(train_stmp::Args),
    /// Run the feature-flag ablation benchmark
    Bench(bench::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => track::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::TrainStmp(args) => train_stmp::run(args),
        Command::Bench(args) => bench::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        // Configuration problems exit like flag-parse errors (2); anything
        // that went wrong while actually running exits 1.
        let config_class = err.chain().any(|c| c.downcast_ref::<ConfigError>().is_some());
        std::process::exit(if config_class { 2 } else { 1 });
    }
}
