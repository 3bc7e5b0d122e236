//! Command-line pipeline: corpus generation, MAE pretraining, probe
//! training, and shift evaluation with optional test-time training.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing prerequisite: run `{stage}` first ({detail})")]
    MissingPrerequisite { stage: &'static str, detail: String },
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::MissingPrerequisite { .. } => 4,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl From<melmae::checkpoint::CheckpointError> for CliError {
    fn from(e: melmae::checkpoint::CheckpointError) -> Self {
        use melmae::checkpoint::CheckpointError::*;
        match e {
            Io { .. } | Format { .. } => CliError::Io(e.to_string()),
            ConfigMismatch { .. } => CliError::Config(e.to_string()),
            WrongStage { .. } => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<melmae::harness::HarnessError> for CliError {
    fn from(e: melmae::harness::HarnessError) -> Self {
        use melmae::harness::HarnessError::*;
        match e {
            Io { .. } | Csv(_) => CliError::Io(e.to_string()),
            EmptyFilteredSplit { .. } => CliError::Config(e.to_string()),
            Audio(inner) => match inner {
                melmae::audio::AudioError::Io { .. } | melmae::audio::AudioError::Format { .. } => {
                    CliError::Io(inner.to_string())
                }
                other => CliError::Pipeline(other.to_string()),
            },
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<melmae::train::TrainError> for CliError {
    fn from(e: melmae::train::TrainError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<melmae::model::ModelError> for CliError {
    fn from(e: melmae::model::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "melmae", about = "Test-time training for masked-autoencoder audio classifiers", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretrain the masked autoencoder on the training split.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the classification head on the frozen encoder.
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Unfreeze the encoder during probe training (full fine-tuning).
        #[arg(long)]
        finetune_encoder: bool,
    },
    /// Evaluate the frozen classifier under a shift.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// clean | noise:<awgn|hum|babble_like|reverb>[:<snr_db>] | gender_cross | dataset_cross
        #[arg(long, default_value = "clean")]
        shift: String,
    },
    /// Evaluate with per-sample test-time training under a shift.
    TttEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "clean")]
        shift: String,
    },
    /// Macro-F across TTT step counts from one adaptation pass per segment.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "clean")]
        shift: String,
        /// Comma-separated ascending step counts, e.g. "0,5,10,20".
        #[arg(long, default_value = "0,5,10,20")]
        checkpoints: String,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config } => pipeline::cmd_gen_data(&RunConfig::load(&config)?),
        Command::Pretrain { config } => pipeline::cmd_pretrain(&RunConfig::load(&config)?),
        Command::Probe { config, finetune_encoder } => pipeline::cmd_probe(&RunConfig::load(&config)?, finetune_encoder),
        Command::Eval { config, shift } => pipeline::cmd_eval(&RunConfig::load(&config)?, &shift, false),
        Command::TttEval { config, shift } => pipeline::cmd_eval(&RunConfig::load(&config)?, &shift, true),
        Command::Sweep { config, shift, checkpoints } => {
            pipeline::cmd_sweep(&RunConfig::load(&config)?, &shift, &checkpoints)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
