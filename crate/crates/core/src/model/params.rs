use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng;
use crate::scalar::{bit_checksum, Scalar};
use crate::tensor::Tensor;

use super::{ModelError, PatchConfig, Result};

/// Weight `[in×out]` plus bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> LinearParams<S> {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        LinearParams {
            weight: trunc_normal(rng, vec![fan_in, fan_out], 0.02),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

/// Pre-norm transformer block: LN → multi-head attention → residual,
/// LN → feed-forward (SiLU) → residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlockParams<S: Scalar> {
    pub ln1_gamma: Tensor<S>,
    pub ln1_beta: Tensor<S>,
    pub q: LinearParams<S>,
    pub k: LinearParams<S>,
    pub v: LinearParams<S>,
    pub proj: LinearParams<S>,
    pub ln2_gamma: Tensor<S>,
    pub ln2_beta: Tensor<S>,
    pub ff1: LinearParams<S>,
    pub ff2: LinearParams<S>,
}

impl<S: Scalar> TransformerBlockParams<S> {
    fn init(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let hidden = 4 * dim;
        TransformerBlockParams {
            ln1_gamma: ones(dim),
            ln1_beta: Tensor::zeros(vec![dim]),
            q: LinearParams::init(rng, dim, dim),
            k: LinearParams::init(rng, dim, dim),
            v: LinearParams::init(rng, dim, dim),
            proj: LinearParams::init(rng, dim, dim),
            ln2_gamma: ones(dim),
            ln2_beta: Tensor::zeros(vec![dim]),
            ff1: LinearParams::init(rng, dim, hidden),
            ff2: LinearParams::init(rng, hidden, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S: Scalar> {
    pub patch_proj: LinearParams<S>,
    /// Fixed sinusoidal positional table `[P×embed]`; never touched by optimizers.
    pub pos: Tensor<S>,
    pub blocks: Vec<TransformerBlockParams<S>>,
    pub norm_gamma: Tensor<S>,
    pub norm_beta: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<S: Scalar> {
    pub proj: LinearParams<S>,
    /// Learned token inserted at every masked position, `[1×decoder_dim]`.
    pub mask_token: Tensor<S>,
    /// Fixed sinusoidal positional table `[P×decoder_dim]`.
    pub pos: Tensor<S>,
    pub blocks: Vec<TransformerBlockParams<S>>,
    pub norm_gamma: Tensor<S>,
    pub norm_beta: Tensor<S>,
    pub recon: LinearParams<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<S: Scalar> {
    pub fc1: LinearParams<S>,
    /// Present when `head_layers == 2`.
    pub fc2: Option<LinearParams<S>>,
    pub out: LinearParams<S>,
}

/// Encoder, decoder, and head parameter groups for a fixed patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Scalar> {
    pub cfg: PatchConfig,
    /// Patch grid this model was built for: (time patches, mel patches).
    pub grid: (usize, usize),
    pub encoder: EncoderParams<S>,
    pub decoder: DecoderParams<S>,
    pub head: HeadParams<S>,
}

fn ones<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor { shape: vec![n], data: vec![S::one(); n], requires_grad: false, grad: None }
}

/// Truncated-normal init: σ-scaled draws resampled while `|z| > 2σ`.
fn trunc_normal<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, sigma: f64) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        // Box-Muller from two uniforms
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        for z in [r * theta.cos(), r * theta.sin()] {
            if z.abs() <= 2.0 && data.len() < numel {
                data.push(S::from(z * sigma).unwrap());
            }
        }
    }
    Tensor { shape, data, requires_grad: false, grad: None }
}

/// Fixed sinusoidal positional encodings: `PE[pos, 2i] = sin(pos·ω_i)`,
/// `PE[pos, 2i+1] = cos(pos·ω_i)` with `ω_i = 10000^(−2i/d)`.
pub fn sinusoidal_table<S: Scalar>(positions: usize, dim: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); positions * dim];
    for p in 0..positions {
        for i in 0..dim.div_ceil(2) {
            let omega = (-(2.0 * i as f64 / dim as f64) * 10000f64.ln()).exp();
            let angle = p as f64 * omega;
            data[p * dim + 2 * i] = S::from(angle.sin()).unwrap();
            if 2 * i + 1 < dim {
                data[p * dim + 2 * i + 1] = S::from(angle.cos()).unwrap();
            }
        }
    }
    Tensor { shape: vec![positions, dim], data, requires_grad: false, grad: None }
}

impl<S: Scalar> ModelParams<S> {
    /// Initializes a model for spectrograms of exactly `frames × mels`
    /// (already cropped to the patch grid).
    pub fn init(cfg: &PatchConfig, frames: usize, mels: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if frames % cfg.patch_time != 0 || mels % cfg.patch_mel != 0 {
            return Err(ModelError::Shape {
                op: "ModelParams::init",
                detail: format!(
                    "grid {frames}×{mels} not divisible by patch {}×{}",
                    cfg.patch_time, cfg.patch_mel
                ),
            });
        }
        let grid = (frames / cfg.patch_time, mels / cfg.patch_mel);
        let p = grid.0 * grid.1;
        if p < 2 {
            return Err(ModelError::Shape { op: "ModelParams::init", detail: format!("patch count {p} too small") });
        }
        let mut rng = rng::seeded(seed);
        let patch_dim = cfg.patch_dim();

        let encoder = EncoderParams {
            patch_proj: LinearParams::init(&mut rng, patch_dim, cfg.embed_dim),
            pos: sinusoidal_table(p, cfg.embed_dim),
            blocks: (0..cfg.enc_layers).map(|_| TransformerBlockParams::init(&mut rng, cfg.embed_dim)).collect(),
            norm_gamma: ones(cfg.embed_dim),
            norm_beta: Tensor::zeros(vec![cfg.embed_dim]),
        };
        let decoder = DecoderParams {
            proj: LinearParams::init(&mut rng, cfg.embed_dim, cfg.decoder_dim),
            mask_token: trunc_normal(&mut rng, vec![1, cfg.decoder_dim], 0.02),
            pos: sinusoidal_table(p, cfg.decoder_dim),
            blocks: (0..cfg.dec_layers).map(|_| TransformerBlockParams::init(&mut rng, cfg.decoder_dim)).collect(),
            norm_gamma: ones(cfg.decoder_dim),
            norm_beta: Tensor::zeros(vec![cfg.decoder_dim]),
            recon: LinearParams::init(&mut rng, cfg.decoder_dim, patch_dim),
        };
        let head = HeadParams {
            fc1: LinearParams::init(&mut rng, cfg.embed_dim, cfg.head_hidden),
            fc2: (cfg.head_layers == 2).then(|| LinearParams::init(&mut rng, cfg.head_hidden, cfg.head_hidden)),
            out: LinearParams::init(&mut rng, cfg.head_hidden, 2),
        };
        Ok(ModelParams { cfg: cfg.clone(), grid, encoder, decoder, head, })
    }

    pub fn num_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Trainable parameters with stable namespaced names. Positional tables
    /// are fixed and deliberately absent.
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<(String, &Tensor<S>)> = Vec::new();
        macro_rules! lin {
            ($vec:expr, $prefix:expr, $lin:expr) => {
                $vec.push((format!("{}.weight", $prefix), &$lin.weight));
                $vec.push((format!("{}.bias", $prefix), &$lin.bias));
            };
        }
        macro_rules! block {
            ($vec:expr, $prefix:expr, $b:expr) => {
                $vec.push((format!("{}.ln1.gamma", $prefix), &$b.ln1_gamma));
                $vec.push((format!("{}.ln1.beta", $prefix), &$b.ln1_beta));
                lin!($vec, format!("{}.q", $prefix), $b.q);
                lin!($vec, format!("{}.k", $prefix), $b.k);
                lin!($vec, format!("{}.v", $prefix), $b.v);
                lin!($vec, format!("{}.proj", $prefix), $b.proj);
                $vec.push((format!("{}.ln2.gamma", $prefix), &$b.ln2_gamma));
                $vec.push((format!("{}.ln2.beta", $prefix), &$b.ln2_beta));
                lin!($vec, format!("{}.ff1", $prefix), $b.ff1);
                lin!($vec, format!("{}.ff2", $prefix), $b.ff2);
            };
        }
        lin!(out, "encoder.patch_proj", self.encoder.patch_proj);
        for (i, b) in self.encoder.blocks.iter().enumerate() {
            block!(out, format!("encoder.block{i}"), b);
        }
        out.push(("encoder.norm.gamma".into(), &self.encoder.norm_gamma));
        out.push(("encoder.norm.beta".into(), &self.encoder.norm_beta));
        lin!(out, "decoder.proj", self.decoder.proj);
        out.push(("decoder.mask_token".into(), &self.decoder.mask_token));
        for (i, b) in self.decoder.blocks.iter().enumerate() {
            block!(out, format!("decoder.block{i}"), b);
        }
        out.push(("decoder.norm.gamma".into(), &self.decoder.norm_gamma));
        out.push(("decoder.norm.beta".into(), &self.decoder.norm_beta));
        lin!(out, "decoder.recon", self.decoder.recon);
        lin!(out, "head.fc1", self.head.fc1);
        if let Some(fc2) = &self.head.fc2 {
            lin!(out, "head.fc2", fc2);
        }
        lin!(out, "head.out", self.head.out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        macro_rules! lin {
            ($vec:expr, $prefix:expr, $lin:expr) => {
                $vec.push((format!("{}.weight", $prefix), &mut $lin.weight));
                $vec.push((format!("{}.bias", $prefix), &mut $lin.bias));
            };
        }
        macro_rules! block {
            ($vec:expr, $prefix:expr, $b:expr) => {
                $vec.push((format!("{}.ln1.gamma", $prefix), &mut $b.ln1_gamma));
                $vec.push((format!("{}.ln1.beta", $prefix), &mut $b.ln1_beta));
                lin!($vec, format!("{}.q", $prefix), $b.q);
                lin!($vec, format!("{}.k", $prefix), $b.k);
                lin!($vec, format!("{}.v", $prefix), $b.v);
                lin!($vec, format!("{}.proj", $prefix), $b.proj);
                $vec.push((format!("{}.ln2.gamma", $prefix), &mut $b.ln2_gamma));
                $vec.push((format!("{}.ln2.beta", $prefix), &mut $b.ln2_beta));
                lin!($vec, format!("{}.ff1", $prefix), $b.ff1);
                lin!($vec, format!("{}.ff2", $prefix), $b.ff2);
            };
        }
        lin!(out, "encoder.patch_proj", self.encoder.patch_proj);
        for (i, b) in self.encoder.blocks.iter_mut().enumerate() {
            block!(out, format!("encoder.block{i}"), b);
        }
        out.push(("encoder.norm.gamma".into(), &mut self.encoder.norm_gamma));
        out.push(("encoder.norm.beta".into(), &mut self.encoder.norm_beta));
        lin!(out, "decoder.proj", self.decoder.proj);
        out.push(("decoder.mask_token".into(), &mut self.decoder.mask_token));
        for (i, b) in self.decoder.blocks.iter_mut().enumerate() {
            block!(out, format!("decoder.block{i}"), b);
        }
        out.push(("decoder.norm.gamma".into(), &mut self.decoder.norm_gamma));
        out.push(("decoder.norm.beta".into(), &mut self.decoder.norm_beta));
        lin!(out, "decoder.recon", self.decoder.recon);
        lin!(out, "head.fc1", self.head.fc1);
        if let Some(fc2) = &mut self.head.fc2 {
            lin!(out, "head.fc2", fc2);
        }
        lin!(out, "head.out", self.head.out);
        out
    }

    /// Marks which groups receive gradients. Positional tables stay frozen.
    pub fn set_trainable(&mut self, encoder: bool, decoder: bool, head: bool) {
        for (name, t) in self.named_params_mut() {
            let on = if name.starts_with("encoder.") {
                encoder
            } else if name.starts_with("decoder.") {
                decoder
            } else {
                head
            };
            t.requires_grad = on;
            if !on {
                t.grad = None;
            }
        }
    }

    /// Bitwise copy of all parameter values in `named_params` order.
    pub fn snapshot(&self) -> Vec<Vec<S>> {
        self.named_params().iter().map(|(_, t)| t.data.clone()).collect()
    }

    /// Restores a snapshot taken from an identically shaped model.
    pub fn restore(&mut self, snapshot: &[Vec<S>]) {
        let mut params = self.named_params_mut();
        assert_eq!(params.len(), snapshot.len(), "snapshot does not match parameter layout");
        for ((_, t), saved) in params.iter_mut().zip(snapshot) {
            assert_eq!(t.data.len(), saved.len(), "snapshot entry shape mismatch");
            t.data.copy_from_slice(saved);
        }
    }

    /// FNV checksum over the bit patterns of one parameter group
    /// (`"encoder."`, `"decoder."`, or `"head."`).
    pub fn group_checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0;
        for (name, t) in self.named_params() {
            if name.starts_with(prefix) {
                h ^= bit_checksum(&t.data).rotate_left(17);
                h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
            }
        }
        h
    }
}
