//! `sartol <command> --config <path> [--override key=value ...]`

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sartol::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "sartol", version, about = "Tolerant road segmentation pipeline for speckled SAR rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Replace a configuration value, e.g. `train.lambda=4`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and their manifest.
    Synth(Common),
    /// Rasterize a road file into binary and tolerant ground truth.
    Gt(Common),
    /// Tile and augment the training rows of the manifest's scenes.
    Tile(Common),
    /// Train a model on a patch directory.
    Train(Common),
    /// Segment an image with a checkpoint.
    Predict(Common),
    /// Score a prediction against a road mask.
    Eval(Common),
    /// Train and score every (t_max, lambda) cell.
    Sweep(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&RunConfig) -> sartol::Result<()>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::Gt(c) => (c, commands::gt),
        Command::Tile(c) => (c, commands::tile),
        Command::Train(c) => (c, commands::train),
        Command::Predict(c) => (c, commands::predict),
        Command::Eval(c) => (c, commands::eval),
        Command::Sweep(c) => (c, commands::sweep),
    };
    let result = RunConfig::load(&common.config, &common.overrides).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
