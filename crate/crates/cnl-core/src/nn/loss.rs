//! MSE and cross-entropy losses with gradients w.r.t. predictions.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::fp;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared error over all (unmasked) entries.
    Mse,
    /// Softmax cross entropy; targets are class ids per row.
    CrossEntropy,
}

/// Targets for a loss evaluation.
#[derive(Debug, Clone)]
pub enum LossTarget<'a> {
    Values(&'a DenseMatrix),
    Classes(&'a [usize]),
}

/// Unmasked loss; see [`compute_loss_masked`].
pub fn compute_loss(
    kind: LossKind,
    pred: &DenseMatrix,
    target: &LossTarget<'_>,
) -> CoreResult<(f64, DenseMatrix)> {
    compute_loss_masked(kind, pred, target, None)
}

/// Loss and gradient w.r.t. `pred`, restricted to the rows in `mask` when
/// given. Masked-out rows contribute zero loss and zero gradient, which is
/// how the virtual node is excluded during integrated training.
pub fn compute_loss_masked(
    kind: LossKind,
    pred: &DenseMatrix,
    target: &LossTarget<'_>,
    mask: Option<&[usize]>,
) -> CoreResult<(f64, DenseMatrix)> {
    let rows: Vec<usize> = match mask {
        Some(m) => {
            let mut m = m.to_vec();
            m.sort_unstable();
            m.dedup();
            if m.iter().any(|&r| r >= pred.rows()) {
                return Err(CoreError::invalid("loss mask row out of range"));
            }
            m
        }
        None => (0..pred.rows()).collect(),
    };
    if rows.is_empty() {
        return Err(CoreError::invalid("loss over empty row set"));
    }
    match (kind, target) {
        (LossKind::Mse, LossTarget::Values(t)) => mse(pred, t, &rows),
        (LossKind::CrossEntropy, LossTarget::Classes(t)) => cross_entropy(pred, t, &rows),
        _ => Err(CoreError::invalid("loss kind / target kind mismatch")),
    }
}

fn mse(pred: &DenseMatrix, target: &DenseMatrix, rows: &[usize]) -> CoreResult<(f64, DenseMatrix)> {
    if !pred.same_shape(target) {
        return Err(CoreError::shape(format!(
            "mse shapes {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let count = (rows.len() * pred.cols()) as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(pred.rows(), pred.cols());
    for &r in rows {
        for c in 0..pred.cols() {
            let diff = pred.get(r, c) - target.get(r, c);
            loss += diff * diff;
            grad.set(r, c, 2.0 * diff / count);
        }
    }
    Ok((loss / count, grad))
}

fn cross_entropy(
    pred: &DenseMatrix,
    targets: &[usize],
    rows: &[usize],
) -> CoreResult<(f64, DenseMatrix)> {
    if targets.len() != pred.rows() {
        return Err(CoreError::shape("one class id per prediction row"));
    }
    let classes = pred.cols();
    let batch = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(pred.rows(), pred.cols());
    for &r in rows {
        let label = targets[r];
        if label >= classes {
            return Err(CoreError::invalid(format!(
                "class id {} >= logit width {}",
                label, classes
            )));
        }
        let probs = softmax_row(pred.row(r));
        loss -= fp::ln(probs[label].max(f64::MIN_POSITIVE));
        for c in 0..classes {
            let indicator = if c == label { 1.0 } else { 0.0 };
            grad.set(r, c, (probs[c] - indicator) / batch);
        }
    }
    Ok((loss / batch, grad))
}

/// Numerically stable softmax of one logit row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out: Vec<f64> = logits.iter().map(|&v| fp::exp(v - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Argmax class id per row.
pub fn argmax_rows(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn mse_zero_at_target() {
        let p = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (loss, grad) = compute_loss(LossKind::Mse, &p, &LossTarget::Values(&p)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn mse_hand_computed_gradient() {
        let p = DenseMatrix::from_rows(&[vec![2.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[vec![0.0]]).unwrap();
        let (loss, grad) = compute_loss(LossKind::Mse, &p, &LossTarget::Values(&t)).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.get(0, 0), 4.0);
    }

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        for c in [2usize, 5, 7] {
            let p = DenseMatrix::zeros(3, c);
            let (loss, _) =
                compute_loss(LossKind::CrossEntropy, &p, &LossTarget::Classes(&[0, 1, 0])).unwrap();
            assert!((loss - fp::ln(c as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_rejects_out_of_range_class() {
        let p = DenseMatrix::zeros(1, 3);
        assert!(compute_loss(LossKind::CrossEntropy, &p, &LossTarget::Classes(&[3])).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let row = [3.0, -1.0, 0.5, 10.0];
        let probs = softmax_row(&row);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_rows_have_zero_gradient() {
        let p = DenseMatrix::from_rows(&[vec![1.0], vec![5.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let (_, grad) =
            compute_loss_masked(LossKind::Mse, &p, &LossTarget::Values(&t), Some(&[0])).unwrap();
        assert_eq!(grad.get(1, 0), 0.0);
        assert!(grad.get(0, 0) != 0.0);
    }
}
