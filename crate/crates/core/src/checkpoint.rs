//! Versioned binary checkpoint container.
//!
//! Layout: `MMCK` magic, `u32` version, `u32` JSON header length, the JSON
//! header (dtype, pipeline stage, patch and frontend config, parameter
//! index, free-form metadata), then the raw little-endian parameter data in
//! header order. Loads fail loudly on any structural or config mismatch;
//! saves are atomic (temp file + rename).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, PatchConfig};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"MMCK";
const VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("checkpoint {path} does not match the run config: {detail}")]
    ConfigMismatch { path: String, detail: String },
    #[error("checkpoint {path} holds stage {found:?}, expected {expected:?}")]
    WrongStage { path: String, found: Stage, expected: Stage },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Which pipeline stage produced the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Probed,
}

/// A complete model state plus the frontend config it was built for.
pub struct Checkpoint<S: Scalar> {
    pub stage: Stage,
    /// Mel band count of the frontend that produced the training inputs.
    pub mels: usize,
    pub params: ModelParams<S>,
    /// Free-form annotations (training filters, audit counters).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    stage: Stage,
    mels: usize,
    patch: PatchConfig,
    grid: (usize, usize),
    metadata: BTreeMap<String, String>,
    params: Vec<ParamMeta>,
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, detail: impl ToString) -> CheckpointError {
    CheckpointError::Format { path: path.display().to_string(), detail: detail.to_string() }
}

/// Serializes and atomically replaces `path`.
pub fn save_checkpoint<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    let named = ckpt.params.named_params();
    let header = Header {
        dtype: S::DTYPE.to_string(),
        stage: ckpt.stage,
        mels: ckpt.mels,
        patch: ckpt.params.cfg.clone(),
        grid: ckpt.params.grid,
        metadata: ckpt.metadata.clone(),
        params: named.iter().map(|(n, t)| ParamMeta { name: n.clone(), shape: t.shape.clone() }).collect(),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| format_err(path, e))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &named {
        for &v in &t.data {
            v.write_le(&mut bytes);
        }
    }

    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Reads a checkpoint, rebuilding the model (fixed positional tables are
/// re-derived from the stored dimensions).
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;

    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(format_err(path, "missing checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(format_err(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len]).map_err(|e| format_err(path, e))?;
    if header.dtype != S::DTYPE {
        return Err(CheckpointError::ConfigMismatch {
            path: path.display().to_string(),
            detail: format!("dtype {} in file, pipeline runs {}", header.dtype, S::DTYPE),
        });
    }

    let frames = header.grid.0 * header.patch.patch_time;
    let mel_bins = header.grid.1 * header.patch.patch_mel;
    let mut params = ModelParams::<S>::init(&header.patch, frames, mel_bins, 0)
        .map_err(|e| format_err(path, format!("stored config invalid: {e}")))?;

    let mut offset = 12 + header_len;
    let mut named = params.named_params_mut();
    if named.len() != header.params.len() {
        return Err(format_err(
            path,
            format!("parameter count mismatch: file has {}, model expects {}", header.params.len(), named.len()),
        ));
    }
    for ((name, tensor), meta) in named.iter_mut().zip(&header.params) {
        if *name != meta.name || tensor.shape != meta.shape {
            return Err(format_err(
                path,
                format!("parameter layout mismatch at {name}: file has {} with shape {:?}", meta.name, meta.shape),
            ));
        }
        let n = tensor.data.len();
        let end = offset + n * S::BYTES;
        if end > bytes.len() {
            return Err(format_err(path, "truncated parameter data"));
        }
        for (i, chunk) in bytes[offset..end].chunks_exact(S::BYTES).enumerate() {
            tensor.data[i] = S::read_le(chunk);
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(format_err(path, format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(Checkpoint { stage: header.stage, mels: header.mels, params, metadata: header.metadata })
}

impl<S: Scalar> Checkpoint<S> {
    /// Fails loudly when the checkpoint was built for a different patch or
    /// frontend configuration than the current run expects.
    pub fn ensure_matches(&self, path: &Path, patch: &PatchConfig, mels: usize) -> Result<()> {
        if &self.params.cfg != patch {
            return Err(CheckpointError::ConfigMismatch {
                path: path.display().to_string(),
                detail: "patch/model config differs from the run config".into(),
            });
        }
        if self.mels != mels {
            return Err(CheckpointError::ConfigMismatch {
                path: path.display().to_string(),
                detail: format!("frontend mels {} in file, run config has {mels}", self.mels),
            });
        }
        Ok(())
    }

    pub fn ensure_stage(&self, path: &Path, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(CheckpointError::WrongStage {
                path: path.display().to_string(),
                found: self.stage,
                expected,
            });
        }
        Ok(())
    }
}
