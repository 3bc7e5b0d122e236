//! Desk-scale test-time training for masked-autoencoder audio classifiers.
//!
//! The pipeline: waveforms → log-mel spectrograms → a tiny masked autoencoder
//! pretrained on reconstruction → a frozen-encoder classification probe →
//! per-sample test-time adaptation of the encoder on the reconstruction loss,
//! evaluated under controlled distribution shifts (noise, gender-cross,
//! corpus-cross) with macro-F reporting.
//!
//! All numeric code is generic over the scalar type ([`scalar::Scalar`]):
//! `f32` for training and inference, `f64` for gradient checks.

pub mod audio;
pub mod checkpoint;
pub mod harness;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod test_utils;
pub mod train;
pub mod ttt;

pub use scalar::{bit_checksum, bits_equal, Scalar};
pub use tensor::{Tape, Tensor, TensorError, Var};

/// Single-precision tensor, the training and inference type.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, the gradient-check type.
pub type Tensor64 = Tensor<f64>;
/// Single-precision model, the type the CLI pipeline runs.
pub type ModelParams32 = model::ModelParams<f32>;
/// Double-precision model for gradient checks.
pub type ModelParams64 = model::ModelParams<f64>;
