//! Waveform ingestion, STFT/mel-spectrogram computation, SNR-controlled
//! noise mixing, and fixed-length segmentation.
//!
//! All operations are pure functions over [`Waveform`] values; the frontend
//! is deterministic (identical inputs give bitwise-identical outputs).

mod mel;
mod mix;
mod segment;
mod wav;

pub use mel::{log_mel, MelFilterbank, FFT_SIZE, HOP_LENGTH, LOG_FLOOR, WIN_LENGTH};
pub use mix::{convolve_normalized, mix_at_snr, signal_power};
pub use segment::{segment_waveform, SEGMENT_SECONDS};
pub use wav::{load_wav, save_wav};

use crate::scalar::Scalar;
use thiserror::Error;

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Error, Debug)]
pub enum AudioError {
    #[error("format error in {path}: {property} is {found}, expected {expected}")]
    Format { path: String, property: &'static str, found: String, expected: String },
    #[error("argument error in {op}: {detail}")]
    Arg { op: &'static str, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono audio at 16 kHz with samples in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<S: Scalar> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
}

impl<S: Scalar> Waveform<S> {
    pub fn new(samples: Vec<S>) -> Self {
        Waveform { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Time×mel grid of log-energies, the model input representation.
///
/// `values` is row-major over frames: `values[frame * mels + mel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram<S: Scalar> {
    pub frames: usize,
    pub mels: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> LogMelSpectrogram<S> {
    /// Standardizes the grid to zero mean and unit variance. Applied by the
    /// pipeline before patches enter the model so values are O(1) regardless
    /// of the absolute energy floor.
    pub fn normalize(&self) -> LogMelSpectrogram<S> {
        let n = S::from(self.values.len()).unwrap();
        let mut mean = S::zero();
        for &v in &self.values {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = S::zero();
        for &v in &self.values {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / n;
        let rstd = S::one() / (var + S::from(1e-8).unwrap()).sqrt();
        let values = self.values.iter().map(|&v| (v - mean) * rstd).collect();
        LogMelSpectrogram { frames: self.frames, mels: self.mels, values }
    }

    /// Debug dump: CSV with one frame per row.
    pub fn to_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for f in 0..self.frames {
            let row: Vec<String> = (0..self.mels)
                .map(|m| format!("{}", self.values[f * self.mels + m].to_f64_lossy()))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}
