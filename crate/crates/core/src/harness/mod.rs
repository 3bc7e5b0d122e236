//! Synthetic corpus generation, shift application, the evaluation protocols
//! (noise / gender-cross / dataset-cross), majority-vote scoring, macro-F,
//! and bootstrap confidence intervals.

mod manifest;
mod metrics;
mod protocol;
mod shift;
mod synth;

pub use manifest::{read_manifest, write_manifest, Gender, Label, ManifestEntry, Split};
pub use metrics::{
    bootstrap_ci, confusion_counts, macro_f, majority_vote, write_report_csv, EvalReport, MacroF,
};
pub use protocol::{
    build_eval_corpus, build_training_corpus, run_protocol, sweep_steps, test_filter_for,
    write_sweep_csv, EvalMode, SplitFilter, TrainAudit,
};
pub use shift::{apply_shift, NoiseType, ShiftSpec};
pub use synth::{generate_synthetic_corpus, synth_noise, SynthConfig};

use crate::audio::AudioError;
use crate::model::ModelError;
use crate::train::TrainError;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("argument error in {op}: {detail}")]
    Arg { op: &'static str, detail: String },
    #[error("protocol error: split {split} with filter {filter} matches no recordings")]
    EmptyFilteredSplit { split: String, filter: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
