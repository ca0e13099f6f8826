//! `ctal`: synthesize data, train, detect, evaluate and analyze.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 non-finite values during training or inference.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctal_core::data::Split;

#[derive(Parser)]
#[command(
    name = "ctal",
    version,
    about = "Continuous temporal action localization"
)]
struct Cli {
    /// TOML file with run configuration overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one configuration key, e.g. `--set optim.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train on the training split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint, including its optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Write detections for one split.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val", value_parser = commands::split_arg)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score detections against the annotations of one split.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val", value_parser = commands::split_arg)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Per length group mAP and false-negative rate.
    Analyze {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val", value_parser = commands::split_arg)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// A usage or configuration problem (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<ctal_core::Error>() {
            return match err {
                ctal_core::Error::NonFinite(_) => 3,
                ctal_core::Error::Config(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::load(cli.config.as_deref(), cli.seed, &cli.sets)
        .map_err(|e| Usage(format!("{e:#}")))?;
    match cli.command {
        Command::Synth { out, force } => commands::synth(&cfg, &out, force),
        Command::Train {
            data,
            out,
            resume,
            force,
        } => commands::train(&cfg, &data, &out, resume.as_deref(), force),
        Command::Detect {
            checkpoint,
            data,
            split,
            out,
            force,
        } => commands::detect(&cfg, &checkpoint, &data, split, &out, force),
        Command::Eval {
            detections,
            data,
            split,
            out,
            force,
        } => commands::eval(&cfg, &detections, &data, split, &out, force),
        Command::Analyze {
            detections,
            data,
            split,
            out,
            force,
        } => commands::analyze(&cfg, &detections, &data, split, &out, force),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
