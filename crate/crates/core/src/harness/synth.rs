use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{save_wav, Waveform, SAMPLE_RATE};
use crate::rng;
use crate::scalar::Scalar;

use super::manifest::{write_manifest, Gender, Label, ManifestEntry, Split};
use super::shift::NoiseType;
use super::{HarnessError, Result};

/// Synthetic corpus layout and the signal factors that realize each shift
/// axis: class → amplitude-modulation rate, gender → fundamental pitch,
/// dataset tag → spectral tilt plus AM envelope family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Recording length; 8 s yields exactly one 7-s segment per recording.
    pub duration_secs: f64,
    /// Male fundamental in Hz; females sing `gender_pitch_mult` higher.
    pub base_freq_hz: f64,
    pub gender_pitch_mult: f64,
    /// Class-conditional AM rates; their separation is what makes the corpus
    /// classifiable at all.
    pub am_rate_healthy_hz: f64,
    pub am_rate_depressed_hz: f64,
    pub am_depth: f64,
    pub harmonics: usize,
    /// Spectral tilt exponent per dataset tag (harmonic k has amplitude k^−tilt).
    pub tilt_tag_a: f64,
    pub tilt_tag_b: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 24,
            n_validation: 8,
            n_test: 16,
            duration_secs: 8.0,
            base_freq_hz: 110.0,
            gender_pitch_mult: 2.0,
            am_rate_healthy_hz: 2.0,
            am_rate_depressed_hz: 5.0,
            am_depth: 0.9,
            harmonics: 8,
            tilt_tag_a: 0.8,
            tilt_tag_b: 1.4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.am_rate_healthy_hz - self.am_rate_depressed_hz).abs() < 1e-9 {
            return Err(HarnessError::Arg {
                op: "SynthConfig::validate",
                detail: "class AM rates must differ (classes must be distinguishable by construction)".into(),
            });
        }
        if self.duration_secs < 3.5 {
            return Err(HarnessError::Arg {
                op: "SynthConfig::validate",
                detail: format!("duration {:.1} s is below the minimum segmentable length (3.5 s)", self.duration_secs),
            });
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(HarnessError::Arg { op: "SynthConfig::validate", detail: "train and test splits must be nonempty".into() });
        }
        if !(self.am_depth > 0.0 && self.am_depth <= 1.0) {
            return Err(HarnessError::Arg { op: "SynthConfig::validate", detail: format!("am_depth {} outside (0, 1]", self.am_depth) });
        }
        if self.harmonics == 0 {
            return Err(HarnessError::Arg { op: "SynthConfig::validate", detail: "need at least one harmonic".into() });
        }
        Ok(())
    }

    pub fn dataset_tags() -> [&'static str; 2] {
        ["synthA", "synthB"]
    }
}

/// One recording: harmonic carrier with class-dependent AM, gender-dependent
/// fundamental, and tag-dependent tilt and envelope family.
fn synth_recording<S: Scalar>(cfg: &SynthConfig, entry: &ManifestEntry) -> Waveform<S> {
    let mut rng = rng::seeded(rng::derive(cfg.seed, &entry.id));
    let n = (cfg.duration_secs * f64::from(SAMPLE_RATE)) as usize;

    let pitch_mult = match entry.gender {
        Gender::F => cfg.gender_pitch_mult,
        Gender::M => 1.0,
    };
    let f0 = cfg.base_freq_hz * pitch_mult * rng.gen_range(0.97..1.03);
    let base_rate = match entry.label {
        Label::Healthy => cfg.am_rate_healthy_hz,
        Label::Depressed => cfg.am_rate_depressed_hz,
    };
    let am_rate = base_rate * rng.gen_range(0.9..1.1);
    let am_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let squared_envelope = entry.dataset_tag == SynthConfig::dataset_tags()[1];
    let tilt = if squared_envelope { cfg.tilt_tag_b } else { cfg.tilt_tag_a };

    let harm_amps: Vec<f64> = (1..=cfg.harmonics).map(|k| (k as f64).powf(-tilt)).collect();
    let harm_phases: Vec<f64> = (0..cfg.harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    let mut samples = vec![0.0f64; n];
    let dt = 1.0 / f64::from(SAMPLE_RATE);
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 * dt;
        let mut carrier = 0.0;
        for (k, (&amp, &phase)) in harm_amps.iter().zip(&harm_phases).enumerate() {
            carrier += amp * (2.0 * PI * (k + 1) as f64 * f0 * t + phase).sin();
        }
        let mut env = 0.5 * (1.0 + (2.0 * PI * am_rate * t + am_phase).sin());
        if squared_envelope {
            env *= env;
        }
        *s = carrier * ((1.0 - cfg.am_depth) + cfg.am_depth * env);
    }
    // low-level noise floor so quiet stretches are not digitally silent
    for s in samples.iter_mut() {
        *s += 0.002 * gaussian(&mut rng);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = 0.5 / peak;
    Waveform::new(samples.into_iter().map(|v| S::from(v * gain).unwrap()).collect())
}

/// Generates the corpus WAV files and manifest under `out_dir`
/// (`out_dir/wav/*.wav`, `out_dir/manifest.csv`). Deterministic from the
/// config seed: rerunning overwrites with identical bytes.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<(Vec<ManifestEntry>, PathBuf)> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir)
        .map_err(|source| HarnessError::Io { path: wav_dir.display().to_string(), source })?;

    let mut entries = Vec::new();
    for (split, split_name, count) in [
        (Split::Train, "train", cfg.n_train),
        (Split::Validation, "validation", cfg.n_validation),
        (Split::Test, "test", cfg.n_test),
    ] {
        for i in 0..count {
            // cycle labels fastest, then genders, then dataset tags, so every
            // split stays balanced across all three factors
            let label = if i % 2 == 0 { Label::Healthy } else { Label::Depressed };
            let gender = if (i / 2) % 2 == 0 { Gender::F } else { Gender::M };
            let dataset_tag = SynthConfig::dataset_tags()[(i / 4) % 2].to_string();
            let id = format!("{split_name}-{i:03}");
            entries.push(ManifestEntry {
                id: id.clone(),
                path: format!("wav/{id}.wav"),
                label,
                gender,
                dataset_tag,
                split,
            });
        }
    }
    for entry in &entries {
        let wave: Waveform<f32> = synth_recording(cfg, entry);
        save_wav(&out_dir.join(&entry.path), &wave)?;
    }
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &entries)?;
    Ok((entries, manifest_path))
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Parametric noise bank. `awgn` is white Gaussian noise; `hum` is a 50 Hz
/// tone stack; `babble_like` sums six slowly drifting amplitude-modulated
/// voiced-band tones; `reverb` returns an exponential-decay impulse response
/// meant for convolution rather than additive mixing.
pub fn synth_noise<S: Scalar>(kind: NoiseType, length: usize, seed: u64) -> Result<Waveform<S>> {
    if length == 0 {
        return Err(HarnessError::Arg { op: "synth_noise", detail: "length must be positive".into() });
    }
    let mut rng = rng::seeded(seed);
    let dt = 1.0 / f64::from(SAMPLE_RATE);
    let samples: Vec<f64> = match kind {
        NoiseType::Awgn => (0..length).map(|_| 0.3 * gaussian(&mut rng)).collect(),
        NoiseType::Hum => {
            let phases: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let amps = [1.0, 0.45, 0.22, 0.12, 0.07];
            (0..length)
                .map(|i| {
                    let t = i as f64 * dt;
                    let mut v = 0.0;
                    for (h, (&amp, &phase)) in amps.iter().zip(&phases).enumerate() {
                        v += amp * (2.0 * PI * 50.0 * (h + 1) as f64 * t + phase).sin();
                    }
                    0.2 * v
                })
                .collect()
        }
        NoiseType::BabbleLike => {
            let mut freqs: Vec<f64> = (0..6).map(|_| rng.gen_range(150.0..1200.0)).collect();
            let am_rates: Vec<f64> = (0..6).map(|_| rng.gen_range(2.0..8.0)).collect();
            let am_phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let mut phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let mut out = Vec::with_capacity(length);
            for i in 0..length {
                let t = i as f64 * dt;
                let mut v = 0.0;
                for tone in 0..6 {
                    // slow random drift of each tone's frequency
                    freqs[tone] = (freqs[tone] + 0.3 * gaussian(&mut rng)).clamp(100.0, 2000.0);
                    phases[tone] += 2.0 * PI * freqs[tone] * dt;
                    let env = 0.5 * (1.0 + (2.0 * PI * am_rates[tone] * t + am_phases[tone]).sin());
                    v += env * phases[tone].sin();
                }
                out.push(0.12 * v);
            }
            out
        }
        NoiseType::Reverb => {
            // unit direct path plus a decaying diffuse tail (~100 ms)
            let tau = 0.1 * f64::from(SAMPLE_RATE);
            (0..length)
                .map(|i| {
                    if i == 0 {
                        1.0
                    } else {
                        0.35 * (-(i as f64) / tau).exp() * gaussian(&mut rng)
                    }
                })
                .collect()
        }
    };
    Ok(Waveform::new(samples.into_iter().map(|v| S::from(v).unwrap()).collect()))
}
