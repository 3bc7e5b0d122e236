use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Patch grid and transformer dimensions.
///
/// Spectrogram inputs must be cropped upstream so frames divide by
/// `patch_time` and mels by `patch_mel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    /// Frames per patch.
    pub patch_time: usize,
    /// Mel bins per patch.
    pub patch_mel: usize,
    pub embed_dim: usize,
    pub decoder_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    /// Fraction of patches hidden from the encoder, in (0, 1).
    pub mask_ratio: f64,
    /// Hidden width of the classification head.
    pub head_hidden: usize,
    /// Hidden SiLU layers in the classification head (1 or 2).
    pub head_layers: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_time: 4,
            patch_mel: 4,
            embed_dim: 64,
            decoder_dim: 32,
            enc_layers: 2,
            dec_layers: 1,
            heads: 4,
            mask_ratio: 0.8,
            head_hidden: 100,
            head_layers: 2,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_time == 0 || self.patch_mel == 0 {
            return Err(ModelError::Config("patch dimensions must be positive".into()));
        }
        if self.embed_dim == 0 || self.decoder_dim == 0 || self.heads == 0 {
            return Err(ModelError::Config("model dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 || self.decoder_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "embed_dim {} and decoder_dim {} must divide by heads {}",
                self.embed_dim, self.decoder_dim, self.heads
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(ModelError::Config(format!("mask_ratio {} must be in (0, 1)", self.mask_ratio)));
        }
        if self.head_layers == 0 || self.head_layers > 2 {
            return Err(ModelError::Config(format!("head_layers {} must be 1 or 2", self.head_layers)));
        }
        if self.head_hidden == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(ModelError::Config("layer counts and head width must be positive".into()));
        }
        Ok(())
    }

    /// Flattened patch length.
    pub fn patch_dim(&self) -> usize {
        self.patch_time * self.patch_mel
    }

    /// Largest grid that fits `frames × mels`, i.e. the crop target.
    pub fn cropped_grid(&self, frames: usize, mels: usize) -> (usize, usize) {
        (frames - frames % self.patch_time, mels - mels % self.patch_mel)
    }
}
