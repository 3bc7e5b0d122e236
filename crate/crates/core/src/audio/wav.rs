//! Minimal RIFF/WAVE reader and writer for the one format the pipeline
//! accepts: PCM, 16-bit signed little-endian, mono, 16 kHz.

use std::io::{Read, Write};
use std::path::Path;

use crate::scalar::Scalar;

use super::{AudioError, Result, Waveform, SAMPLE_RATE};

fn io_err(path: &Path, source: std::io::Error) -> AudioError {
    AudioError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, property: &'static str, found: impl ToString, expected: impl ToString) -> AudioError {
    AudioError::Format {
        path: path.display().to_string(),
        property,
        found: found.to_string(),
        expected: expected.to_string(),
    }
}

/// Reads a PCM 16-bit mono 16 kHz WAV file and normalizes samples to
/// `[−1, 1]` by dividing by 32768.
pub fn load_wav<S: Scalar>(path: &Path) -> Result<Waveform<S>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err(path, "container", "not a RIFF/WAVE file", "RIFF/WAVE"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(format_err(path, "chunk size", format!("{size} bytes past end of file"), "a chunk within the file"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(format_err(path, "fmt chunk", format!("{} bytes", body.len()), "at least 16 bytes"));
                }
                let codec = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((codec, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned; odd sizes carry a pad byte
        pos = body_end + (size & 1);
    }

    let (codec, channels, rate, bits) = fmt.ok_or_else(|| format_err(path, "fmt chunk", "missing", "present"))?;
    if codec != 1 {
        return Err(format_err(path, "codec", format!("format tag {codec}"), "1 (PCM)"));
    }
    if channels != 1 {
        return Err(format_err(path, "channels", channels, "1 (mono)"));
    }
    if rate != SAMPLE_RATE {
        return Err(format_err(path, "sample rate", format!("{rate} Hz"), format!("{SAMPLE_RATE} Hz")));
    }
    if bits != 16 {
        return Err(format_err(path, "bit depth", format!("{bits} bits"), "16 bits"));
    }
    let data = data.ok_or_else(|| format_err(path, "data chunk", "missing", "present"))?;
    if data.len() % 2 != 0 {
        return Err(format_err(path, "data chunk", format!("{} bytes", data.len()), "an even byte count"));
    }

    let scale = S::from(1.0 / 32768.0).unwrap();
    let samples = data
        .chunks_exact(2)
        .map(|c| {
            let v = i16::from_le_bytes([c[0], c[1]]);
            S::from(v).unwrap() * scale
        })
        .collect();
    Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
}

/// Writes a PCM 16-bit mono 16 kHz WAV file. Samples are clamped to
/// `[−1, 1]` and quantized by rounding to the nearest step of 1/32767.
pub fn save_wav<S: Scalar>(path: &Path, w: &Waveform<S>) -> Result<()> {
    let n = w.samples.len();
    let data_bytes = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_bytes).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_bytes.to_le_bytes());
    for &s in &w.samples {
        let v = s.to_f64_lossy().clamp(-1.0, 1.0);
        let q = (v * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| io_err(path, e))
}
