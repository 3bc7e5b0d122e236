//! Per-sample test-time training: adapt the encoder on masked reconstruction
//! of a single test sample, predict, and restore.
//!
//! Adaptation draws `views_per_batch` independent random mask plans of the
//! same spectrogram per step (no augmentation beyond masking), averages the
//! reconstruction loss over the views, and takes one SGD-momentum step on the
//! encoder only. The decoder and head are frozen throughout; optimizer state
//! starts at zero velocity for every sample.

use serde::{Deserialize, Serialize};

use crate::audio::LogMelSpectrogram;
use crate::model::{bind_params, classify, make_mask_plan, reconstruction_loss, ModelParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tape;
use crate::train::{SgdMomentumState, TrainError};

pub type Result<T> = std::result::Result<T, TrainError>;

/// Test-time training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TttConfig {
    pub steps: usize,
    pub views_per_batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        TttConfig { steps: 20, views_per_batch: 128, lr: 2.5e-3, momentum: 0.9, weight_decay: 0.2, mask_ratio: 0.8, seed: 0 }
    }
}

/// Per-step reconstruction losses recorded during one adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationTrace {
    pub losses: Vec<f64>,
}

impl AdaptationTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

/// One segment-level prediction: hard label plus the class probabilities
/// behind it (index 0 healthy, 1 depressed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPrediction {
    pub label: usize,
    pub probs: [f64; 2],
}

fn predict_with<S: Scalar>(s: &LogMelSpectrogram<S>, params: &ModelParams<S>) -> Result<SegmentPrediction> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let out = classify(&mut tape, s, &bound)?;
    let p = tape.value(out.probs);
    let probs = [p[0].to_f64_lossy(), p[1].to_f64_lossy()];
    let label = usize::from(probs[1] > probs[0]);
    Ok(SegmentPrediction { label, probs })
}

/// Runs `steps` adaptation steps in place, returning the loss trace.
/// Decoder and head parameters are bitwise untouched; `steps = 0` leaves the
/// model bitwise unchanged.
pub fn ttt_adapt<S: Scalar>(
    s: &LogMelSpectrogram<S>,
    params: &mut ModelParams<S>,
    cfg: &TttConfig,
) -> Result<AdaptationTrace> {
    let (_, trace) = adapt_recording(s, params, cfg, &[])?;
    Ok(trace)
}

/// Core adaptation loop, recording a classification at every step count in
/// `record_at` (which must be sorted, unique, and ≤ `cfg.steps`). Mutates the
/// encoder in place; callers that must not keep the adaptation wrap this in
/// snapshot/restore.
fn adapt_recording<S: Scalar>(
    s: &LogMelSpectrogram<S>,
    params: &mut ModelParams<S>,
    cfg: &TttConfig,
    record_at: &[usize],
) -> Result<(Vec<SegmentPrediction>, AdaptationTrace)> {
    if cfg.views_per_batch == 0 {
        return Err(TrainError::Arg { op: "ttt_adapt", detail: "views_per_batch must be at least 1".into() });
    }
    for pair in record_at.windows(2) {
        if pair[0] >= pair[1] {
            return Err(TrainError::Arg { op: "ttt_adapt", detail: "checkpoints must be sorted ascending and unique".into() });
        }
    }
    if let Some(&max) = record_at.last() {
        if max > cfg.steps {
            return Err(TrainError::Arg {
                op: "ttt_adapt",
                detail: format!("checkpoint {max} exceeds configured steps {}", cfg.steps),
            });
        }
    }

    let run_steps = if record_at.is_empty() { cfg.steps } else { *record_at.last().unwrap() };
    let mut predictions = Vec::with_capacity(record_at.len());
    let mut losses = Vec::with_capacity(run_steps);

    params.set_trainable(true, false, false);
    let mut sgd = SgdMomentumState::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut plan_rng = rng::substream(cfg.seed, 0x77a1);
    let p = params.num_patches();

    for step in 0..=run_steps {
        if record_at.contains(&step) {
            predictions.push(predict_with(s, params)?);
        }
        if step == run_steps {
            break;
        }
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params);
        let inv = S::from(1.0 / cfg.views_per_batch as f64).unwrap();
        let mut acc = None;
        for _ in 0..cfg.views_per_batch {
            let plan_seed = rand::Rng::gen::<u64>(&mut plan_rng);
            let plan = make_mask_plan(p, cfg.mask_ratio, plan_seed)?;
            let loss = reconstruction_loss(&mut tape, s, &plan, &bound)?;
            acc = Some(match acc {
                None => loss,
                Some(prev) => tape.add(prev, loss)?,
            });
        }
        let mean_loss = tape.scale(acc.expect("views_per_batch >= 1"), inv);
        tape.backward(mean_loss)?;
        let grads = crate::train::collect_grads(&tape, &bound, |n| n.starts_with("encoder."));
        let mut group: Vec<(String, &mut crate::tensor::Tensor<S>)> =
            params.named_params_mut().into_iter().filter(|(n, _)| n.starts_with("encoder.")).collect();
        sgd.step(&mut group, &grads)?;
        losses.push(tape.value(mean_loss)[0].to_f64_lossy());
    }
    Ok((predictions, AdaptationTrace { losses }))
}

/// Adapts a private copy of the encoder, predicts with it, and restores the
/// original parameters bitwise before returning.
pub fn ttt_predict<S: Scalar>(
    s: &LogMelSpectrogram<S>,
    params: &mut ModelParams<S>,
    cfg: &TttConfig,
) -> Result<(SegmentPrediction, AdaptationTrace)> {
    let snapshot = params.snapshot();
    let result = adapt_recording(s, params, cfg, &[cfg.steps]);
    params.restore(&snapshot);
    let (mut predictions, trace) = result?;
    let prediction = predictions.pop().expect("one checkpoint requested");
    Ok((prediction, trace))
}

/// One adaptation pass with predictions captured at every checkpoint step
/// count; parameters are restored bitwise afterwards. Powers the TTT step
/// sweep without re-running adaptation from scratch.
pub fn ttt_predict_at_checkpoints<S: Scalar>(
    s: &LogMelSpectrogram<S>,
    params: &mut ModelParams<S>,
    cfg: &TttConfig,
    checkpoints: &[usize],
) -> Result<(Vec<SegmentPrediction>, AdaptationTrace)> {
    if checkpoints.is_empty() {
        return Err(TrainError::Arg { op: "ttt_predict_at_checkpoints", detail: "no checkpoints requested".into() });
    }
    let snapshot = params.snapshot();
    let result = adapt_recording(s, params, cfg, checkpoints);
    params.restore(&snapshot);
    result
}

#[cfg(test)]
mod tests;
