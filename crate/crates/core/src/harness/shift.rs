use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{convolve_normalized, mix_at_snr, Waveform};
use crate::scalar::Scalar;

use super::synth::synth_noise;
use super::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    Awgn,
    Hum,
    BabbleLike,
    Reverb,
}

impl NoiseType {
    pub const ALL: [NoiseType; 4] = [NoiseType::Awgn, NoiseType::Hum, NoiseType::BabbleLike, NoiseType::Reverb];
}

/// Which distribution shift a protocol run applies. Noise carries its own
/// parameters; the cross shifts edit no audio (they are realized by manifest
/// filtering).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftSpec {
    Clean,
    Noise { noise_type: NoiseType, snr_db: f64 },
    GenderCross,
    DatasetCross,
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftSpec::Clean => write!(f, "clean"),
            ShiftSpec::Noise { noise_type, snr_db } => {
                let name = match noise_type {
                    NoiseType::Awgn => "awgn",
                    NoiseType::Hum => "hum",
                    NoiseType::BabbleLike => "babble_like",
                    NoiseType::Reverb => "reverb",
                };
                write!(f, "noise:{name}:{snr_db}")
            }
            ShiftSpec::GenderCross => write!(f, "gender_cross"),
            ShiftSpec::DatasetCross => write!(f, "dataset_cross"),
        }
    }
}

impl FromStr for ShiftSpec {
    type Err = String;

    /// Accepts `clean`, `gender_cross`, `dataset_cross`, or
    /// `noise:<awgn|hum|babble_like|reverb>[:<snr_db>]` (default 5 dB).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clean" => return Ok(ShiftSpec::Clean),
            "gender_cross" => return Ok(ShiftSpec::GenderCross),
            "dataset_cross" => return Ok(ShiftSpec::DatasetCross),
            _ => {}
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() < 2 || parts[0] != "noise" {
            return Err(format!("unknown shift {s:?} (expected clean, noise:<type>[:<snr_db>], gender_cross, dataset_cross)"));
        }
        let noise_type = match parts[1] {
            "awgn" => NoiseType::Awgn,
            "hum" => NoiseType::Hum,
            "babble_like" => NoiseType::BabbleLike,
            "reverb" => NoiseType::Reverb,
            other => return Err(format!("unknown noise type {other:?}")),
        };
        let snr_db = match parts.get(2) {
            None => 5.0,
            Some(v) => v.parse::<f64>().map_err(|e| format!("bad SNR {v:?}: {e}"))?,
        };
        Ok(ShiftSpec::Noise { noise_type, snr_db })
    }
}

/// Applies a shift to one recording's audio. `clean` and the cross shifts
/// return the input bitwise; noise shifts mix at the requested SNR, except
/// reverberation which convolves with a power-normalized impulse response.
pub fn apply_shift<S: Scalar>(audio: &Waveform<S>, spec: &ShiftSpec, seed: u64) -> Result<Waveform<S>> {
    match spec {
        ShiftSpec::Clean | ShiftSpec::GenderCross | ShiftSpec::DatasetCross => Ok(audio.clone()),
        ShiftSpec::Noise { noise_type: NoiseType::Reverb, .. } => {
            let ir: Waveform<f64> = synth_noise(NoiseType::Reverb, audio.len().min(6400), seed)?;
            let impulse: Vec<f64> = ir.samples;
            Ok(convolve_normalized(audio, &impulse)?)
        }
        ShiftSpec::Noise { noise_type, snr_db } => {
            let noise: Waveform<S> = synth_noise(*noise_type, audio.len(), seed)?;
            Ok(mix_at_snr(audio, &noise, *snr_db)?)
        }
    }
}
