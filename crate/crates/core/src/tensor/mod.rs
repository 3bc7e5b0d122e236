//! Dense tensors and reverse-mode automatic differentiation.
//!
//! The design is a Wengert tape: forward ops append nodes to a [`Tape`],
//! backward walks the nodes in exact reverse execution order and accumulates
//! gradients additively. Storage is flat row-major with explicit shapes and a
//! fixed left-to-right reduction order everywhere, so forward results and
//! gradients are bitwise deterministic for identical inputs.
//!
//! There is no general broadcasting; the only shape-adapting ops are the
//! row-wise bias add and scalar scaling, which is all the model needs.

mod tape;
#[cfg(test)]
mod tests;

pub use tape::{Tape, Var};

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("argument error in {op}: {detail}")]
    Arg { op: &'static str, detail: String },
    #[error("backward has already been run on this tape")]
    TapeConsumed,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense multi-dimensional array with optional gradient storage.
///
/// `data` is flat row-major; `grad`, when present, has the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Shape {
                op: "Tensor::new",
                detail: format!("zero dimension in shape {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(TensorError::Shape {
                op: "Tensor::new",
                detail: format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Drops any accumulated gradient buffer.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

#[cfg(test)]
mod tensor_type_tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_shape() {
        let err = Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn new_rejects_zero_dim() {
        assert!(Tensor::<f32>::new(vec![0, 2], vec![]).is_err());
    }
}
