use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::LogMelSpectrogram;
use crate::model::{bind_params, classify, make_mask_plan, reconstruction_loss, BoundModel, ModelParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tape;

use super::{AdamState, Result, TrainError};

/// Masked-autoencoder pretraining hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 200, batch_size: 8, lr: 1e-3, weight_decay: 1e-5, seed: 0 }
    }
}

/// Probe-training hyperparameters (NLL objective).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 32, epochs: 5, lr: 1e-3, weight_decay: 1e-5, seed: 0 }
    }
}

/// Pulls gradients for bound parameters whose name satisfies `want`.
pub(crate) fn collect_grads<S: Scalar>(
    tape: &Tape<S>,
    bound: &BoundModel,
    want: impl Fn(&str) -> bool,
) -> BTreeMap<String, Vec<S>> {
    let mut out = BTreeMap::new();
    for (name, var) in &bound.bindings {
        if want(name) {
            if let Some(g) = tape.grad(*var) {
                out.insert(name.clone(), g.to_vec());
            }
        }
    }
    out
}

/// Endless deterministic batch sampler: shuffles index order each pass.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchSampler { order: (0..n).collect(), pos: 0, rng: rng::substream(seed, 0xba7c) };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Pretrains encoder and decoder on masked reconstruction with Adam; the
/// classification head is untouched. Returns the per-step mean batch loss.
pub fn pretrain_mae<S: Scalar>(
    corpus: &[LogMelSpectrogram<S>],
    params: &mut ModelParams<S>,
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus { op: "pretrain_mae" });
    }
    params.set_trainable(true, true, false);
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay);
    let mut sampler = BatchSampler::new(corpus.len(), cfg.seed);
    let mut plan_rng = rng::substream(cfg.seed, 0x91a5);
    let p = params.num_patches();
    let ratio = params.cfg.mask_ratio;

    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch = sampler.next_batch(cfg.batch_size.min(corpus.len()));
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params);
        let inv = S::from(1.0 / batch.len() as f64).unwrap();
        let mut acc = None;
        for &idx in &batch {
            let plan_seed = rand::Rng::gen::<u64>(&mut plan_rng);
            let plan = make_mask_plan(p, ratio, plan_seed)?;
            let loss = reconstruction_loss(&mut tape, &corpus[idx], &plan, &bound)?;
            acc = Some(match acc {
                None => loss,
                Some(prev) => tape.add(prev, loss)?,
            });
        }
        let mean_loss = tape.scale(acc.expect("nonempty batch"), inv);
        tape.backward(mean_loss)?;
        let grads = collect_grads(&tape, &bound, |n| n.starts_with("encoder.") || n.starts_with("decoder."));
        let mut group: Vec<(String, &mut crate::tensor::Tensor<S>)> = params
            .named_params_mut()
            .into_iter()
            .filter(|(n, _)| n.starts_with("encoder.") || n.starts_with("decoder."))
            .collect();
        adam.step(&mut group, &grads)?;
        curve.push(tape.value(mean_loss)[0].to_f64_lossy());
    }
    Ok(curve)
}

/// Trains the classification head with NLL (and the encoder too when
/// `finetune_encoder` is set); the decoder is never touched. Returns the
/// per-step loss curve.
pub fn train_probe<S: Scalar>(
    corpus: &[(LogMelSpectrogram<S>, usize)],
    params: &mut ModelParams<S>,
    cfg: &TrainConfig,
    finetune_encoder: bool,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus { op: "train_probe" });
    }
    if let Some(&(_, label)) = corpus.iter().find(|(_, l)| *l > 1) {
        return Err(TrainError::BadLabel { label });
    }
    params.set_trainable(finetune_encoder, false, true);
    let want = move |n: &str| n.starts_with("head.") || (finetune_encoder && n.starts_with("encoder."));
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay);

    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut epoch_rng = rng::substream(cfg.seed, 0xe90c + epoch as u64);
        order.shuffle(&mut epoch_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, params);
            let mut logit_rows = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &idx in batch {
                let out = classify(&mut tape, &corpus[idx].0, &bound)?;
                logit_rows.push(out.logits);
                labels.push(corpus[idx].1);
            }
            let logits = tape.concat_rows(&logit_rows)?;
            let log_probs = tape.log_softmax(logits)?;
            let loss = tape.nll_loss(log_probs, &labels)?;
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &bound, want);
            let mut group: Vec<(String, &mut crate::tensor::Tensor<S>)> =
                params.named_params_mut().into_iter().filter(|(n, _)| want(n)).collect();
            adam.step(&mut group, &grads)?;
            curve.push(tape.value(loss)[0].to_f64_lossy());
        }
    }
    Ok(curve)
}

/// Writes a loss curve as `step,loss` CSV.
pub fn write_loss_csv<W: std::io::Write>(curve: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,loss")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}
