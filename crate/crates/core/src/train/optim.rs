use std::collections::BTreeMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Result, TrainError};

/// Adam with decoupled weight decay (`θ ← θ·(1 − lr·wd)` before the
/// bias-corrected moment update). Moment buffers are keyed by parameter name
/// and created lazily, shaped like their parameters.
pub struct AdamState<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: BTreeMap<String, Vec<S>>,
    v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update over a named parameter group. Every parameter must have a
    /// gradient in `grads`.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<S>)], grads: &BTreeMap<String, Vec<S>>) -> Result<()> {
        self.t += 1;
        let lr = S::from(self.lr).unwrap();
        let b1 = S::from(self.beta1).unwrap();
        let b2 = S::from(self.beta2).unwrap();
        let eps = S::from(self.eps).unwrap();
        let one = S::one();
        let decay = S::from(1.0 - self.lr * self.weight_decay).unwrap();
        let c1 = S::from(1.0 - self.beta1.powi(self.t as i32)).unwrap();
        let c2 = S::from(1.0 - self.beta2.powi(self.t as i32)).unwrap();

        for (name, tensor) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| TrainError::MissingGradient { name: name.clone() })?;
            if g.len() != tensor.data.len() {
                return Err(TrainError::Arg {
                    op: "adam_step",
                    detail: format!("gradient for {name} has {} elements, parameter has {}", g.len(), tensor.data.len()),
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![S::zero(); g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![S::zero(); g.len()]);
            for i in 0..g.len() {
                let theta = tensor.data[i] * decay;
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                tensor.data[i] = theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// SGD with momentum and coupled weight decay folded into the gradient:
/// `v ← momentum·v + g + wd·θ; θ ← θ − lr·v`.
pub struct SgdMomentumState<S: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> SgdMomentumState<S> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdMomentumState { lr, momentum, weight_decay, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Tensor<S>)], grads: &BTreeMap<String, Vec<S>>) -> Result<()> {
        let lr = S::from(self.lr).unwrap();
        let mu = S::from(self.momentum).unwrap();
        let wd = S::from(self.weight_decay).unwrap();
        for (name, tensor) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| TrainError::MissingGradient { name: name.clone() })?;
            if g.len() != tensor.data.len() {
                return Err(TrainError::Arg {
                    op: "sgd_momentum_step",
                    detail: format!("gradient for {name} has {} elements, parameter has {}", g.len(), tensor.data.len()),
                });
            }
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![S::zero(); g.len()]);
            for i in 0..g.len() {
                v[i] = mu * v[i] + g[i] + wd * tensor.data[i];
                tensor.data[i] = tensor.data[i] - lr * v[i];
            }
        }
        Ok(())
    }

    /// Seeds the velocity buffer directly (tests only need this to exercise
    /// momentum carryover).
    #[cfg(test)]
    pub(crate) fn set_velocity(&mut self, name: &str, v: Vec<S>) {
        self.velocity.insert(name.to_string(), v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor<f32> {
        Tensor::scalar(v)
    }

    fn grads_of(name: &str, g: Vec<f32>) -> BTreeMap<String, Vec<f32>> {
        BTreeMap::from([(name.to_string(), g)])
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::<f32>::new(1e-3, 0.0);
        let mut p = scalar_param(0.7);
        let mut group = vec![("w".to_string(), &mut p)];
        adam.step(&mut group, &grads_of("w", vec![0.0])).unwrap();
        assert_eq!(p.data[0], 0.7);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        for g in [0.3f32, -2.0, 17.0] {
            let mut adam = AdamState::<f32>::new(1e-3, 0.0);
            let mut p = scalar_param(1.0);
            let mut group = vec![("w".to_string(), &mut p)];
            adam.step(&mut group, &grads_of("w", vec![g])).unwrap();
            let delta = 1.0 - p.data[0];
            // first step is lr·sign(g) up to eps
            assert!((delta - 1e-3 * g.signum()).abs() < 1e-5, "g = {g}, delta = {delta}");
        }
    }

    #[test]
    fn adam_descends_quadratic_to_below_half() {
        // oracle: run the update rule itself on f(θ) = θ², ∇ = 2θ
        let mut adam = AdamState::<f64>::new(0.05, 0.0);
        let mut p = Tensor::scalar(1.0f64);
        for _ in 0..100 {
            let g = 2.0 * p.data[0];
            let mut group = vec![("w".to_string(), &mut p)];
            adam.step(&mut group, &grads_of_f64("w", vec![g])).unwrap();
        }
        assert!(p.data[0].abs() < 0.5, "theta = {}", p.data[0]);
    }

    fn grads_of_f64(name: &str, g: Vec<f64>) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([(name.to_string(), g)])
    }

    #[test]
    fn adam_missing_gradient_is_an_error() {
        let mut adam = AdamState::<f32>::new(1e-3, 0.0);
        let mut p = scalar_param(1.0);
        let mut group = vec![("w".to_string(), &mut p)];
        let empty = BTreeMap::new();
        assert!(matches!(adam.step(&mut group, &empty), Err(TrainError::MissingGradient { .. })));
    }

    #[test]
    fn adam_decoupled_decay_shrinks_before_update() {
        let mut adam = AdamState::<f64>::new(0.1, 0.5);
        let mut p = Tensor::scalar(2.0f64);
        let mut group = vec![("w".to_string(), &mut p)];
        adam.step(&mut group, &grads_of_f64("w", vec![0.0])).unwrap();
        // zero gradient: only the decay acts, θ ← θ·(1 − lr·wd) = 2·0.95
        assert!((p.data[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn sgd_vanilla_step() {
        let mut sgd = SgdMomentumState::<f32>::new(1.0, 0.0, 0.0);
        let mut p = scalar_param(3.0);
        let mut group = vec![("w".to_string(), &mut p)];
        sgd.step(&mut group, &grads_of("w", vec![0.25])).unwrap();
        assert_eq!(p.data[0], 2.75);
    }

    #[test]
    fn sgd_momentum_carries_with_zero_gradient() {
        let mut sgd = SgdMomentumState::<f64>::new(0.1, 0.9, 0.0);
        sgd.set_velocity("w", vec![2.0]);
        let mut p = Tensor::scalar(1.0f64);
        let mut group = vec![("w".to_string(), &mut p)];
        sgd.step(&mut group, &grads_of_f64("w", vec![0.0])).unwrap();
        // θ moves by lr·momentum·v = 0.1·0.9·2
        assert!((p.data[0] - (1.0 - 0.18)).abs() < 1e-12);
    }

    #[test]
    fn sgd_two_steps_unrolled_displacement() {
        let g = 0.4f64;
        let lr = 0.01;
        let mut sgd = SgdMomentumState::<f64>::new(lr, 0.9, 0.0);
        let mut p = Tensor::scalar(5.0f64);
        for _ in 0..2 {
            let mut group = vec![("w".to_string(), &mut p)];
            sgd.step(&mut group, &grads_of_f64("w", vec![g])).unwrap();
        }
        let expect = 5.0 - lr * (g + 1.9 * g);
        assert!((p.data[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn sgd_coupled_decay_enters_velocity() {
        let mut sgd = SgdMomentumState::<f64>::new(0.1, 0.0, 0.5);
        let mut p = Tensor::scalar(2.0f64);
        let mut group = vec![("w".to_string(), &mut p)];
        sgd.step(&mut group, &grads_of_f64("w", vec![0.0])).unwrap();
        // v = wd·θ = 1.0; θ ← 2.0 − 0.1·1.0
        assert!((p.data[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn optimizers_over_disjoint_groups_do_not_interact() {
        let mut adam_a = AdamState::<f64>::new(0.5, 0.0);
        let mut adam_b = AdamState::<f64>::new(0.5, 0.0);
        let mut pa = Tensor::scalar(1.0f64);
        let mut pb = Tensor::scalar(1.0f64);
        // step A several times, B once; B must behave as a fresh optimizer
        for _ in 0..5 {
            let mut ga = vec![("a".to_string(), &mut pa)];
            adam_a.step(&mut ga, &grads_of_f64("a", vec![1.0])).unwrap();
        }
        let mut solo = Tensor::scalar(1.0f64);
        let mut gs = vec![("b".to_string(), &mut solo)];
        let mut fresh = AdamState::<f64>::new(0.5, 0.0);
        fresh.step(&mut gs, &grads_of_f64("b", vec![1.0])).unwrap();
        let mut gb = vec![("b".to_string(), &mut pb)];
        adam_b.step(&mut gb, &grads_of_f64("b", vec![1.0])).unwrap();
        assert_eq!(pb.data[0].to_bits(), solo.data[0].to_bits());
    }
}
