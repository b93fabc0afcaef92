mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

/// Malformed or missing user input (exit code 2).
#[derive(Debug)]
pub struct BadInput(pub String);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

/// A self-test check failed (exit code 3).
#[derive(Debug)]
pub struct SelftestFailed(pub Vec<String>);

impl std::fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "self-test failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for SelftestFailed {}

#[derive(Parser)]
#[command(name = "lka3d", version, about = "3-D large-kernel-attention segmentation: data, training, inference, metrics and analysis")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "LKA3D_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that takes a run configuration.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_set)]
    sets: Vec<(String, Value)>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic image/label pairs.
    Synth(commands::SynthArgs),
    /// Train a model on a dataset directory.
    Train(commands::TrainArgs),
    /// Predict label maps for input volumes.
    Infer(commands::InferArgs),
    /// Score predictions against reference labels.
    Metrics(commands::MetricsArgs),
    /// Report parameter and FLOP counts.
    Count(commands::CountArgs),
    /// Compute effective receptive fields.
    Erf(commands::ErfArgs),
    /// Measure prediction drift under input blurring.
    Blurprobe(commands::BlurArgs),
    /// Run the built-in numerical oracle suites.
    Selftest(commands::SelftestArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use lka3d_core::Error as E;
    for cause in err.chain() {
        if cause.is::<SelftestFailed>() {
            return 3;
        }
        if cause.is::<BadInput>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } | E::Format { .. } | E::Config(_) | E::Shape(_) | E::Empty(_) | E::OutOfRange(_) | E::Json(_) | E::Conv(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Count(a) => commands::count(a),
        Command::Erf(a) => commands::erf(a),
        Command::Blurprobe(a) => commands::blurprobe(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
