//! SNR-controlled additive mixing and power utilities.

use crate::scalar::Scalar;

use super::{AudioError, Result, Waveform};

/// Silence threshold on mean power.
const SILENCE_POWER: f64 = 1e-12;

/// Mean power of a sample buffer, in f64 regardless of the pipeline scalar.
pub fn signal_power<S: Scalar>(samples: &[S]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0f64;
    for &s in samples {
        let v = s.to_f64_lossy();
        acc += v * v;
    }
    acc / samples.len() as f64
}

/// Mixes `noise` into `clean` at the requested SNR in dB.
///
/// The noise is tiled end-to-end (or truncated) to the clean length, then
/// scaled by `α = sqrt(P_clean / (P_noise · 10^(snr/10)))` so that
/// `10·log10(P_clean / P_scaled_noise) == snr_db`.
pub fn mix_at_snr<S: Scalar>(clean: &Waveform<S>, noise: &Waveform<S>, snr_db: f64) -> Result<Waveform<S>> {
    if clean.is_empty() {
        return Err(AudioError::Arg { op: "mix_at_snr", detail: "clean signal is empty".into() });
    }
    if noise.is_empty() {
        return Err(AudioError::Arg { op: "mix_at_snr", detail: "noise signal is empty".into() });
    }
    let p_clean = signal_power(&clean.samples);
    if p_clean <= SILENCE_POWER {
        return Err(AudioError::Arg { op: "mix_at_snr", detail: format!("clean signal is silent (power {p_clean:.3e})") });
    }

    // tile or truncate the noise to the clean length
    let n = clean.len();
    let tiled: Vec<S> = (0..n).map(|i| noise.samples[i % noise.len()]).collect();
    let p_noise = signal_power(&tiled);
    if p_noise <= SILENCE_POWER {
        return Err(AudioError::Arg { op: "mix_at_snr", detail: format!("noise signal is silent (power {p_noise:.3e})") });
    }

    let alpha = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let alpha_s = S::from(alpha).unwrap();
    let samples: Vec<S> = clean
        .samples
        .iter()
        .zip(&tiled)
        .map(|(&c, &nz)| c + alpha_s * nz)
        .collect();
    Ok(Waveform::new(samples))
}

/// Convolves `x` with an impulse response and rescales the result to the
/// input's mean power. Used for the reverberation shift, which must not
/// change the overall level.
pub fn convolve_normalized<S: Scalar>(x: &Waveform<S>, impulse: &[f64]) -> Result<Waveform<S>> {
    if impulse.is_empty() {
        return Err(AudioError::Arg { op: "convolve_normalized", detail: "empty impulse response".into() });
    }
    let p_in = signal_power(&x.samples);
    if p_in <= SILENCE_POWER {
        return Err(AudioError::Arg { op: "convolve_normalized", detail: "input signal is silent".into() });
    }
    let n = x.len();
    let mut out = vec![0.0f64; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let kmax = impulse.len().min(i + 1);
        for (k, h) in impulse.iter().enumerate().take(kmax) {
            acc += h * x.samples[i - k].to_f64_lossy();
        }
        *o = acc;
    }
    let p_out = signal_power(&out);
    let gain = (p_in / p_out).sqrt();
    let samples = out.into_iter().map(|v| S::from(v * gain).unwrap()).collect();
    Ok(Waveform::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_utils::uniform_values;

    fn wave(seed: u64, n: usize) -> Waveform<f64> {
        Waveform::new(uniform_values(seed, n, -0.5, 0.5))
    }

    /// Measured SNR of a mix produced from known clean/noise parts.
    fn measured_snr(clean: &Waveform<f64>, mixed: &Waveform<f64>) -> f64 {
        let residual: Vec<f64> = mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
        10.0 * (signal_power(&clean.samples) / signal_power(&residual)).log10()
    }

    #[test]
    fn equal_power_zero_db_has_unit_gain() {
        let clean = wave(1, 4000);
        let p = signal_power(&clean.samples);
        // rescale noise to exactly the clean power
        let noise_raw = wave(2, 4000);
        let g = (p / signal_power(&noise_raw.samples)).sqrt();
        let noise = Waveform::new(noise_raw.samples.iter().map(|&v| v * g).collect());
        let mixed = mix_at_snr(&clean, &noise, 0.0).unwrap();
        for ((m, c), n) in mixed.samples.iter().zip(&clean.samples).zip(&noise.samples) {
            assert!((m - (c + n)).abs() < 1e-12, "alpha should be 1 at 0 dB equal power");
        }
    }

    #[test]
    fn five_db_equal_power_gain_is_10_pow_minus_quarter() {
        let clean = wave(3, 4000);
        let p = signal_power(&clean.samples);
        let noise_raw = wave(4, 4000);
        let g = (p / signal_power(&noise_raw.samples)).sqrt();
        let noise = Waveform::new(noise_raw.samples.iter().map(|&v| v * g).collect());
        let mixed = mix_at_snr(&clean, &noise, 5.0).unwrap();
        let expected_alpha = 10f64.powf(-5.0 / 20.0);
        assert!((expected_alpha - 0.5623).abs() < 1e-4);
        for ((m, c), n) in mixed.samples.iter().zip(&clean.samples).zip(&noise.samples) {
            assert!((m - (c + expected_alpha * n)).abs() < 1e-9);
        }
    }

    #[test]
    fn measured_snr_matches_requested_for_20_random_pairs() {
        for i in 0..20 {
            let clean = wave(100 + i, 3000);
            let noise = wave(200 + i, 1700); // shorter: exercises tiling
            let snr = -10.0 + 2.0 * i as f64;
            let mixed = mix_at_snr(&clean, &noise, snr).unwrap();
            let got = measured_snr(&clean, &mixed);
            assert!((got - snr).abs() < 0.01, "requested {snr} dB, measured {got} dB");
        }
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let clean = wave(5, 1000);
        let silent = Waveform::new(vec![0.0f64; 1000]);
        assert!(mix_at_snr(&clean, &silent, 5.0).is_err());
        assert!(mix_at_snr(&silent, &clean, 5.0).is_err());
    }

    #[test]
    fn mix_minus_clean_is_independent_of_clean_content() {
        // linearity: with the same noise and equal clean powers, the residual
        // is identical regardless of the clean content
        let clean_a = wave(6, 2000);
        let pa = signal_power(&clean_a.samples);
        let clean_b_raw = wave(7, 2000);
        let g = (pa / signal_power(&clean_b_raw.samples)).sqrt();
        let clean_b = Waveform::new(clean_b_raw.samples.iter().map(|&v| v * g).collect());
        let noise = wave(8, 2000);

        let mix_a = mix_at_snr(&clean_a, &noise, 7.0).unwrap();
        let mix_b = mix_at_snr(&clean_b, &noise, 7.0).unwrap();
        for i in 0..2000 {
            let res_a = mix_a.samples[i] - clean_a.samples[i];
            let res_b = mix_b.samples[i] - clean_b.samples[i];
            assert!((res_a - res_b).abs() < 1e-9);
        }
    }

    #[test]
    fn convolution_preserves_power_within_one_percent() {
        let x = wave(9, 8000);
        let impulse: Vec<f64> = (0..800).map(|i| (-(i as f64) / 120.0).exp() * if i % 7 == 0 { 1.0 } else { 0.3 }).collect();
        let y = convolve_normalized(&x, &impulse).unwrap();
        let ratio = signal_power(&y.samples) / signal_power(&x.samples);
        assert!((ratio - 1.0).abs() < 0.01, "power ratio {ratio}");
    }
}
