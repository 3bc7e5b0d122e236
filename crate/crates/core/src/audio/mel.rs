//! STFT and mel filterbank. The frontend is fixed at a 25 ms Hann window,
//! 10 ms hop, and a 512-point FFT at 16 kHz; only the mel count varies.
//!
//! All spectral math runs in `f64` and is cast to the pipeline scalar at the
//! end, so `f32` and `f64` pipelines see the same underlying spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;

use super::{AudioError, LogMelSpectrogram, Result, Waveform, SAMPLE_RATE};

/// Analysis window: 25 ms at 16 kHz.
pub const WIN_LENGTH: usize = 400;
/// Frame hop: 10 ms at 16 kHz.
pub const HOP_LENGTH: usize = 160;
/// FFT size (window is zero-padded to this length).
pub const FFT_SIZE: usize = 512;
/// Energy floor added before the log.
pub const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the positive-frequency FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    mels: usize,
    bins: usize,
    /// `mels × bins`, row-major, nonnegative weights.
    weights: Vec<f64>,
    /// Center frequency of each filter in Hz, strictly increasing.
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    /// Builds `mels` triangular filters spaced evenly on the mel scale from
    /// 0 Hz to Nyquist. Fails if any filter would cover no FFT bin (too many
    /// mels for the fixed 512-point FFT).
    pub fn new(mels: usize) -> Result<Self> {
        if mels == 0 {
            return Err(AudioError::Arg { op: "MelFilterbank::new", detail: "mel count must be positive".into() });
        }
        let bins = FFT_SIZE / 2 + 1;
        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let points_hz: Vec<f64> = (0..mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..bins).map(|k| k as f64 * f64::from(SAMPLE_RATE) / FFT_SIZE as f64).collect();

        let mut weights = vec![0.0; mels * bins];
        for m in 0..mels {
            let (lo, center, hi) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
            let mut any = false;
            for (k, &f) in bin_hz.iter().enumerate() {
                let w = if f >= lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f <= hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    any = true;
                }
                weights[m * bins + k] = w;
            }
            if !any {
                return Err(AudioError::Arg {
                    op: "MelFilterbank::new",
                    detail: format!("filter {m} covers no FFT bin; {mels} mels is too many for a {FFT_SIZE}-point FFT"),
                });
            }
        }
        let centers_hz = points_hz[1..=mels].to_vec();
        Ok(MelFilterbank { mels, bins, weights, centers_hz })
    }

    pub fn mels(&self) -> usize {
        self.mels
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for m in 0..self.mels {
            let row = &self.weights[m * self.bins..(m + 1) * self.bins];
            let mut acc = 0.0;
            for (w, p) in row.iter().zip(power) {
                acc += w * p;
            }
            out[m] = acc;
        }
    }
}

/// Hann-windowed STFT magnitude² → mel filterbank → `ln(x + 1e-10)`.
///
/// Frame count is `1 + floor((len − win) / hop)`; the input must cover at
/// least one analysis window.
pub fn log_mel<S: Scalar>(w: &Waveform<S>, fb: &MelFilterbank) -> Result<LogMelSpectrogram<S>> {
    let n = w.samples.len();
    if n < WIN_LENGTH {
        return Err(AudioError::Arg {
            op: "log_mel",
            detail: format!("waveform of {n} samples is shorter than the {WIN_LENGTH}-sample analysis window"),
        });
    }
    let frames = 1 + (n - WIN_LENGTH) / HOP_LENGTH;
    let mels = fb.mels();

    let window: Vec<f64> = (0..WIN_LENGTH)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / WIN_LENGTH as f64).cos()))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);

    let mut values = vec![S::zero(); frames * mels];
    let mut buf = vec![Complex::new(0.0f64, 0.0); FFT_SIZE];
    let mut power = vec![0.0f64; FFT_SIZE / 2 + 1];
    let mut mel_row = vec![0.0f64; mels];
    for t in 0..frames {
        let start = t * HOP_LENGTH;
        for i in 0..FFT_SIZE {
            let v = if i < WIN_LENGTH { w.samples[start + i].to_f64_lossy() * window[i] } else { 0.0 };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        fb.apply(&power, &mut mel_row);
        for m in 0..mels {
            values[t * mels + m] = S::from((mel_row[m] + LOG_FLOOR).ln()).unwrap();
        }
    }
    Ok(LogMelSpectrogram { frames, mels, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_waveform_hits_the_floor() {
        let w = Waveform::<f64>::new(vec![0.0; 1600]);
        let fb = MelFilterbank::new(8).unwrap();
        let s = log_mel(&w, &fb).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(s.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn one_second_gives_98_frames() {
        let w = Waveform::<f32>::new(vec![0.0; 16000]);
        let fb = MelFilterbank::new(8).unwrap();
        let s = log_mel(&w, &fb).unwrap();
        assert_eq!(s.frames, 98); // 1 + (16000 − 400) / 160
    }

    #[test]
    fn too_short_waveform_is_an_error() {
        let w = Waveform::<f32>::new(vec![0.0; 399]);
        let fb = MelFilterbank::new(8).unwrap();
        assert!(log_mel(&w, &fb).is_err());
    }

    #[test]
    fn pure_tone_peaks_at_nearest_center() {
        // oracle: compute filterbank centers and assert the argmax bin is the
        // one whose center frequency is nearest 1 kHz
        let freq = 1000.0;
        let samples: Vec<f64> = (0..16000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect();
        let w = Waveform::new(samples);
        let fb = MelFilterbank::new(32).unwrap();
        let s = log_mel(&w, &fb).unwrap();

        // average energy per mel bin over all frames
        let mut energy = vec![0.0f64; s.mels];
        for t in 0..s.frames {
            for m in 0..s.mels {
                energy[m] += s.values[t * s.mels + m];
            }
        }
        let argmax = (0..s.mels).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        let nearest = (0..s.mels)
            .min_by(|&a, &b| {
                (fb.centers_hz()[a] - freq).abs().total_cmp(&(fb.centers_hz()[b] - freq).abs())
            })
            .unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn log_mel_is_bitwise_deterministic() {
        let samples: Vec<f32> = (0..4000).map(|i| ((i * 37) % 101) as f32 / 101.0 - 0.5).collect();
        let w = Waveform::new(samples);
        let fb = MelFilterbank::new(16).unwrap();
        let a = log_mel(&w, &fb).unwrap();
        let b = log_mel(&w, &fb).unwrap();
        assert!(crate::scalar::bits_equal(&a.values, &b.values));
    }

    #[test]
    fn centers_strictly_increase() {
        let fb = MelFilterbank::new(32).unwrap();
        for pair in fb.centers_hz().windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn too_many_mels_for_fft_is_an_error() {
        assert!(MelFilterbank::new(200).is_err());
    }
}
