use std::collections::BTreeMap;

use crate::audio::LogMelSpectrogram;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

use super::{MaskPlan, ModelError, ModelParams, PatchConfig, Result};

const LN_EPS: f64 = 1e-5;

/// Flattens a spectrogram into `P` patches, row-major over (time, mel).
/// Each patch is `patch_time × patch_mel` values, itself row-major over time.
pub fn patchify<S: Scalar>(s: &LogMelSpectrogram<S>, cfg: &PatchConfig) -> Result<Tensor<S>> {
    if s.frames % cfg.patch_time != 0 || s.mels % cfg.patch_mel != 0 {
        return Err(ModelError::Shape {
            op: "patchify",
            detail: format!(
                "spectrogram {}×{} not divisible by patch {}×{}",
                s.frames, s.mels, cfg.patch_time, cfg.patch_mel
            ),
        });
    }
    let tp = s.frames / cfg.patch_time;
    let mp = s.mels / cfg.patch_mel;
    let pd = cfg.patch_dim();
    let mut data = Vec::with_capacity(tp * mp * pd);
    for t_patch in 0..tp {
        for m_patch in 0..mp {
            for dt in 0..cfg.patch_time {
                let frame = t_patch * cfg.patch_time + dt;
                let mel0 = m_patch * cfg.patch_mel;
                data.extend_from_slice(&s.values[frame * s.mels + mel0..frame * s.mels + mel0 + cfg.patch_mel]);
            }
        }
    }
    Ok(Tensor::new(vec![tp * mp, pd], data)?)
}

/// Inverse of [`patchify`] for a grid of known size.
pub fn unpatchify<S: Scalar>(patches: &Tensor<S>, cfg: &PatchConfig, frames: usize, mels: usize) -> Result<LogMelSpectrogram<S>> {
    let tp = frames / cfg.patch_time;
    let mp = mels / cfg.patch_mel;
    let pd = cfg.patch_dim();
    if patches.shape != [tp * mp, pd] {
        return Err(ModelError::Shape {
            op: "unpatchify",
            detail: format!("patches shape {:?} does not match grid {frames}×{mels}", patches.shape),
        });
    }
    let mut values = vec![S::zero(); frames * mels];
    for t_patch in 0..tp {
        for m_patch in 0..mp {
            let p = t_patch * mp + m_patch;
            for dt in 0..cfg.patch_time {
                for dm in 0..cfg.patch_mel {
                    let frame = t_patch * cfg.patch_time + dt;
                    let mel = m_patch * cfg.patch_mel + dm;
                    values[frame * mels + mel] = patches.data[p * pd + dt * cfg.patch_mel + dm];
                }
            }
        }
    }
    Ok(LogMelSpectrogram { frames, mels, values })
}

/// Crops a spectrogram down to the largest patch-divisible grid.
pub fn crop_to_patch_grid<S: Scalar>(s: &LogMelSpectrogram<S>, cfg: &PatchConfig) -> LogMelSpectrogram<S> {
    let (frames, mels) = cfg.cropped_grid(s.frames, s.mels);
    if frames == s.frames && mels == s.mels {
        return s.clone();
    }
    let mut values = Vec::with_capacity(frames * mels);
    for f in 0..frames {
        values.extend_from_slice(&s.values[f * s.mels..f * s.mels + mels]);
    }
    LogMelSpectrogram { frames, mels, values }
}

// ── parameter binding ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBlock {
    pub ln1: (Var, Var),
    pub q: BoundLinear,
    pub k: BoundLinear,
    pub v: BoundLinear,
    pub proj: BoundLinear,
    pub ln2: (Var, Var),
    pub ff1: BoundLinear,
    pub ff2: BoundLinear,
}

/// Model parameters recorded as tape leaves for one forward pass, plus the
/// `(name, var)` pairs for reading gradients back out.
pub struct BoundModel {
    pub cfg: PatchConfig,
    pub num_patches: usize,
    pub enc_patch_proj: BoundLinear,
    pub enc_pos: Var,
    pub enc_blocks: Vec<BoundBlock>,
    pub enc_norm: (Var, Var),
    pub dec_proj: BoundLinear,
    pub dec_mask_token: Var,
    pub dec_pos: Var,
    pub dec_blocks: Vec<BoundBlock>,
    pub dec_norm: (Var, Var),
    pub dec_recon: BoundLinear,
    pub head_fc1: BoundLinear,
    pub head_fc2: Option<BoundLinear>,
    pub head_out: BoundLinear,
    pub bindings: Vec<(String, Var)>,
}

/// Copies every parameter onto the tape, honoring each tensor's
/// `requires_grad` flag (set via [`ModelParams::set_trainable`]).
pub fn bind_params<S: Scalar>(tape: &mut Tape<S>, m: &ModelParams<S>) -> BoundModel {
    let mut vars: BTreeMap<String, Var> = BTreeMap::new();
    let mut bindings = Vec::new();
    for (name, t) in m.named_params() {
        let v = tape.leaf_tensor(t);
        vars.insert(name.clone(), v);
        bindings.push((name, v));
    }
    let get = |n: &str| vars[n];
    let lin = |p: &str| BoundLinear { w: get(&format!("{p}.weight")), b: get(&format!("{p}.bias")) };
    let block = |p: &str| BoundBlock {
        ln1: (get(&format!("{p}.ln1.gamma")), get(&format!("{p}.ln1.beta"))),
        q: lin(&format!("{p}.q")),
        k: lin(&format!("{p}.k")),
        v: lin(&format!("{p}.v")),
        proj: lin(&format!("{p}.proj")),
        ln2: (get(&format!("{p}.ln2.gamma")), get(&format!("{p}.ln2.beta"))),
        ff1: lin(&format!("{p}.ff1")),
        ff2: lin(&format!("{p}.ff2")),
    };

    BoundModel {
        cfg: m.cfg.clone(),
        num_patches: m.num_patches(),
        enc_patch_proj: lin("encoder.patch_proj"),
        enc_pos: tape.leaf_tensor(&m.encoder.pos),
        enc_blocks: (0..m.cfg.enc_layers).map(|i| block(&format!("encoder.block{i}"))).collect(),
        enc_norm: (get("encoder.norm.gamma"), get("encoder.norm.beta")),
        dec_proj: lin("decoder.proj"),
        dec_mask_token: get("decoder.mask_token"),
        dec_pos: tape.leaf_tensor(&m.decoder.pos),
        dec_blocks: (0..m.cfg.dec_layers).map(|i| block(&format!("decoder.block{i}"))).collect(),
        dec_norm: (get("decoder.norm.gamma"), get("decoder.norm.beta")),
        dec_recon: lin("decoder.recon"),
        head_fc1: lin("head.fc1"),
        head_fc2: m.head.fc2.as_ref().map(|_| lin("head.fc2")),
        head_out: lin("head.out"),
        bindings,
    }
}

// ── forward pieces ──────────────────────────────────────────────────────

fn linear<S: Scalar>(tape: &mut Tape<S>, x: Var, l: &BoundLinear) -> Result<Var> {
    let y = tape.matmul(x, l.w)?;
    Ok(tape.add_bias(y, l.b)?)
}

fn multi_head_attention<S: Scalar>(tape: &mut Tape<S>, x: Var, blk: &BoundBlock, heads: usize) -> Result<Var> {
    let dim = tape.shape(x)[1];
    let head_dim = dim / heads;
    let q = linear(tape, x, &blk.q)?;
    let k = linear(tape, x, &blk.k)?;
    let v = linear(tape, x, &blk.v)?;
    let scale = S::from(1.0 / (head_dim as f64).sqrt()).unwrap();
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax(scaled)?;
        per_head.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&per_head)?;
    linear(tape, merged, &blk.proj)
}

fn transformer_block<S: Scalar>(tape: &mut Tape<S>, x: Var, blk: &BoundBlock, heads: usize) -> Result<Var> {
    let eps = S::from(LN_EPS).unwrap();
    let normed = tape.layer_norm(x, blk.ln1.0, blk.ln1.1, eps)?;
    let attn = multi_head_attention(tape, normed, blk, heads)?;
    let x = tape.add(x, attn)?;
    let normed = tape.layer_norm(x, blk.ln2.0, blk.ln2.1, eps)?;
    let h = linear(tape, normed, &blk.ff1)?;
    let h = tape.silu(h);
    let ff = linear(tape, h, &blk.ff2)?;
    Ok(tape.add(x, ff)?)
}

/// Linear projection of flattened patches plus the fixed sinusoidal position
/// encoding for each patch's original index.
pub fn embed_patches<S: Scalar>(tape: &mut Tape<S>, patches: Var, bound: &BoundModel) -> Result<Var> {
    let projected = linear(tape, patches, &bound.enc_patch_proj)?;
    Ok(tape.add(projected, bound.enc_pos)?)
}

/// Marks whether a latent sequence came from visible patches only or from the
/// full unmasked sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    VisibleOnly,
    Full,
}

/// Encoder output tokens plus their provenance.
pub struct LatentSequence {
    pub tokens: Var,
    pub source: LatentSource,
}

/// Runs the encoder blocks and final norm over an already-embedded sequence.
/// Exposed separately so properties like permutation equivariance can be
/// checked on arbitrary token orders.
pub fn encode_tokens<S: Scalar>(tape: &mut Tape<S>, tokens: Var, bound: &BoundModel) -> Result<Var> {
    let mut x = tokens;
    for blk in &bound.enc_blocks {
        x = transformer_block(tape, x, blk, bound.cfg.heads)?;
    }
    let eps = S::from(LN_EPS).unwrap();
    Ok(tape.layer_norm(x, bound.enc_norm.0, bound.enc_norm.1, eps)?)
}

/// With a plan, only visible tokens enter the transformer; without one (the
/// classification path) all patches are encoded.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    embedded: Var,
    plan: Option<&MaskPlan>,
    bound: &BoundModel,
) -> Result<LatentSequence> {
    match plan {
        Some(p) => {
            if p.num_patches() != bound.num_patches {
                return Err(ModelError::Shape {
                    op: "encode",
                    detail: format!("plan covers {} patches, model has {}", p.num_patches(), bound.num_patches),
                });
            }
            let visible = tape.select_rows(embedded, &p.visible)?;
            let tokens = encode_tokens(tape, visible, bound)?;
            Ok(LatentSequence { tokens, source: LatentSource::VisibleOnly })
        }
        None => {
            let tokens = encode_tokens(tape, embedded, bound)?;
            Ok(LatentSequence { tokens, source: LatentSource::Full })
        }
    }
}

/// Projects visible latents to decoder width, inserts the learned mask token
/// at every masked index, restores original patch order, runs the decoder
/// blocks, and reconstructs all `P` patches.
pub fn decode<S: Scalar>(tape: &mut Tape<S>, latents: &LatentSequence, plan: &MaskPlan, bound: &BoundModel) -> Result<Var> {
    if latents.source != LatentSource::VisibleOnly {
        return Err(ModelError::Arg { op: "decode", detail: "latents must come from a masked encode".into() });
    }
    let v = plan.visible.len();
    let got = tape.shape(latents.tokens)[0];
    if got != v {
        return Err(ModelError::Shape { op: "decode", detail: format!("{got} latents for {v} visible patches") });
    }
    if plan.num_patches() != bound.num_patches {
        return Err(ModelError::Shape {
            op: "decode",
            detail: format!("plan covers {} patches, model has {}", plan.num_patches(), bound.num_patches),
        });
    }
    let projected = linear(tape, latents.tokens, &bound.dec_proj)?;
    let mask_rows = tape.repeat_row(bound.dec_mask_token, plan.masked.len())?;
    let shuffled = tape.concat_rows(&[projected, mask_rows])?;
    let restored = tape.permute_rows(shuffled, &plan.restore)?;
    let mut x = tape.add(restored, bound.dec_pos)?;
    for blk in &bound.dec_blocks {
        x = transformer_block(tape, x, blk, bound.cfg.heads)?;
    }
    let eps = S::from(LN_EPS).unwrap();
    let normed = tape.layer_norm(x, bound.dec_norm.0, bound.dec_norm.1, eps)?;
    linear(tape, normed, &bound.dec_recon)
}

/// Masked-reconstruction objective: mean squared error between the decoder
/// output and the patchified input, averaged over masked patches only.
pub fn reconstruction_loss<S: Scalar>(
    tape: &mut Tape<S>,
    s: &LogMelSpectrogram<S>,
    plan: &MaskPlan,
    bound: &BoundModel,
) -> Result<Var> {
    let patches = patchify(s, &bound.cfg)?;
    let target = tape.leaf_tensor(&patches);
    let embedded = embed_patches(tape, target, bound)?;
    let latents = encode(tape, embedded, Some(plan), bound)?;
    let recon = decode(tape, &latents, plan, bound)?;
    Ok(tape.mse_masked(recon, target, &plan.masked)?)
}

/// Classification forward: probabilities and the logits they came from.
pub struct ClassOutput {
    pub probs: Var,
    pub logits: Var,
}

/// Full-sequence encode (no masking), mean-pool over tokens, head forward,
/// softmax. Deterministic: no randomness on this path.
pub fn classify<S: Scalar>(tape: &mut Tape<S>, s: &LogMelSpectrogram<S>, bound: &BoundModel) -> Result<ClassOutput> {
    let patches = patchify(s, &bound.cfg)?;
    let input = tape.leaf_tensor(&patches);
    let embedded = embed_patches(tape, input, bound)?;
    let latents = encode(tape, embedded, None, bound)?;
    let pooled = tape.mean_rows(latents.tokens)?;
    let h = linear(tape, pooled, &bound.head_fc1)?;
    let mut h = tape.silu(h);
    if let Some(fc2) = &bound.head_fc2 {
        let z = linear(tape, h, fc2)?;
        h = tape.silu(z);
    }
    let logits = linear(tape, h, &bound.head_out)?;
    let probs = tape.softmax(logits)?;
    Ok(ClassOutput { probs, logits })
}

/// Convenience wrapper: class probabilities of one spectrogram as plain values.
pub fn classify_probs<S: Scalar>(s: &LogMelSpectrogram<S>, params: &ModelParams<S>) -> Result<[f64; 2]> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let out = classify(&mut tape, s, &bound)?;
    let p = tape.value(out.probs);
    Ok([p[0].to_f64_lossy(), p[1].to_f64_lossy()])
}
