//! Fixed-length segmentation of recordings.

use crate::scalar::Scalar;

use super::{AudioError, Result, Waveform, SAMPLE_RATE};

/// Segment length used throughout the pipeline.
pub const SEGMENT_SECONDS: usize = 7;

/// Splits a recording into consecutive non-overlapping 7-second segments.
///
/// A final remainder of at least half a segment is zero-padded to full length
/// and kept; shorter remainders are dropped. Inputs shorter than half a
/// segment are rejected.
pub fn segment_waveform<S: Scalar>(w: &Waveform<S>) -> Result<Vec<Waveform<S>>> {
    let seg_len = SEGMENT_SECONDS * SAMPLE_RATE as usize;
    let half = seg_len / 2;
    if w.len() < half {
        return Err(AudioError::Arg {
            op: "segment_waveform",
            detail: format!(
                "recording of {:.2} s is shorter than half a segment ({:.1} s)",
                w.duration_secs(),
                half as f64 / f64::from(SAMPLE_RATE)
            ),
        });
    }
    let full = w.len() / seg_len;
    let mut segments = Vec::with_capacity(full + 1);
    for i in 0..full {
        segments.push(Waveform::new(w.samples[i * seg_len..(i + 1) * seg_len].to_vec()));
    }
    let remainder = w.len() - full * seg_len;
    if remainder >= half {
        let mut tail = w.samples[full * seg_len..].to_vec();
        tail.resize(seg_len, S::zero());
        segments.push(Waveform::new(tail));
    }
    Ok(segments)
}
