//! Optimizers and the labeled training stages: masked-autoencoder
//! pretraining and the frozen-encoder classification probe (optionally
//! unfreezing the encoder for the full fine-tuning variant).

mod optim;
mod stages;

pub use optim::{AdamState, SgdMomentumState};
pub use stages::{pretrain_mae, train_probe, write_loss_csv, PretrainConfig, TrainConfig};
pub(crate) use stages::collect_grads;

use crate::model::ModelError;
use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("missing gradient for parameter {name}")]
    MissingGradient { name: String },
    #[error("argument error in {op}: {detail}")]
    Arg { op: &'static str, detail: String },
    #[error("label {label} invalid: labels must be 0 (healthy) or 1 (depressed)")]
    BadLabel { label: usize },
    #[error("empty corpus passed to {op}")]
    EmptyCorpus { op: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;
