//! Trainable parameters with accumulated gradients.

use alloc::string::String;

use rand::Rng;

use crate::fp;
use crate::matrix::DenseMatrix;

/// A named trainable tensor and its gradient (same shape).
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ParamTensor {
            name: name.into(),
            value: DenseMatrix::zeros(rows, cols),
            grad: DenseMatrix::zeros(rows, cols),
        }
    }

    /// Glorot-uniform init: U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let s = fp::sqrt(6.0 / (rows + cols) as f64);
        let mut value = DenseMatrix::zeros(rows, cols);
        for v in value.data_mut() {
            *v = rng.gen_range(-s..s);
        }
        ParamTensor {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(rows, cols),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
