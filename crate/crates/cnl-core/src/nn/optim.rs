//! Adam (with decoupled weight decay) and SGD.

use alloc::vec::Vec;

use super::param::ParamTensor;
use crate::error::{CoreError, CoreResult};
use crate::fp;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer state. One instance per model; parameter order must stay
/// stable across steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl Optimizer {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(lr, weight_decay),
            OptimizerKind::Sgd => Self::sgd(lr, weight_decay),
        }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut [&mut ParamTensor]) -> CoreResult<()> {
        match self.kind {
            OptimizerKind::Sgd => {
                let wd = self.weight_decay;
                let lr = self.lr;
                for p in params.iter_mut() {
                    let ParamTensor { value, grad, .. } = &mut **p;
                    for (x, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *x -= lr * (g + wd * *x);
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    for p in params.iter() {
                        self.m.push(DenseMatrix::zeros(p.value.rows(), p.value.cols()));
                        self.v.push(DenseMatrix::zeros(p.value.rows(), p.value.cols()));
                    }
                }
                if self.m.len() != params.len() {
                    return Err(CoreError::invalid(
                        "optimizer state does not match parameter list",
                    ));
                }
                self.t += 1;
                let b1t = fp::powi(self.beta1, self.t as u32);
                let b2t = fp::powi(self.beta2, self.t as u32);
                for (i, p) in params.iter_mut().enumerate() {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    let ParamTensor { value, grad, .. } = &mut **p;
                    for (((x, g), mi), vi) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                        let m_hat = *mi / (1.0 - b1t);
                        let v_hat = *vi / (1.0 - b2t);
                        // decoupled weight decay
                        *x -= self.lr * (m_hat / (fp::sqrt(v_hat) + self.eps)
                            + self.weight_decay * *x);
                    }
                }
            }
        }
        for p in params.iter() {
            if !p.value.is_finite() {
                return Err(CoreError::NonFinite(p.name.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> ParamTensor {
        let mut p = ParamTensor::zeros("p", 1, values.len());
        p.value.row_mut(0).copy_from_slice(values);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for mut opt in [Optimizer::adam(0.1, 0.0), Optimizer::sgd(0.1, 0.0)] {
            let mut p = param(&[1.5, -2.5]);
            opt.step(&mut [&mut p]).unwrap();
            assert_eq!(p.value.data(), &[1.5, -2.5]);
        }
    }

    #[test]
    fn sgd_update_rule() {
        let mut opt = Optimizer::sgd(0.1, 0.0);
        let mut p = param(&[0.0]);
        p.grad.set(0, 0, 1.0);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.get(0, 0) - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut opt = Optimizer::adam(0.01, 0.0);
        let mut p = param(&[0.0, 0.0]);
        p.grad.row_mut(0).copy_from_slice(&[0.37, -120.0]);
        opt.step(&mut [&mut p]).unwrap();
        // bias-corrected first step: lr * g / (|g| + eps') ~= lr * sign(g)
        assert!((p.value.get(0, 0) - (-0.01)).abs() < 1e-6);
        assert!((p.value.get(0, 1) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn sgd_weight_decay_shrinks_parameters() {
        let mut opt = Optimizer::sgd(0.1, 0.5);
        let mut p = param(&[1.0]);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.get(0, 0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn non_finite_update_detected() {
        let mut opt = Optimizer::sgd(1.0, 0.0);
        let mut p = param(&[0.0]);
        p.grad.set(0, 0, f64::INFINITY);
        assert!(opt.step(&mut [&mut p]).is_err());
    }
}
