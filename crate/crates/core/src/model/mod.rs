//! The masked-autoencoder model: patch embedding, random masking, transformer
//! encoder/decoder with order restoration, masked-reconstruction loss, and the
//! classification head.

mod config;
mod forward;
mod mask;
mod params;

pub use config::PatchConfig;
pub use forward::{
    bind_params, classify, classify_probs, crop_to_patch_grid, decode, embed_patches, encode,
    encode_tokens, patchify, reconstruction_loss, unpatchify, BoundModel, ClassOutput,
    LatentSequence, LatentSource,
};
pub use mask::{make_mask_plan, MaskPlan};
pub use params::{sinusoidal_table, LinearParams, ModelParams, TransformerBlockParams};

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("argument error in {op}: {detail}")]
    Arg { op: &'static str, detail: String },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
