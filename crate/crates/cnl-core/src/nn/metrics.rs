//! Evaluation metrics: RMSE, MAE, Pearson correlation, accuracy.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::fp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    Rmse,
    Pcc,
    Acc,
    Mae,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::Pcc => "pcc",
            MetricKind::Acc => "acc",
            MetricKind::Mae => "mae",
        }
    }
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> CoreResult<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(CoreError::invalid("metric inputs must be equal-length and non-empty"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> CoreResult<f64> {
    check_lengths(pred, truth)?;
    let mse: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(fp::sqrt(mse))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> CoreResult<f64> {
    check_lengths(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| fp::abs(p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Pearson correlation; errors when the truth (or prediction) series is
/// constant, in which case callers exclude it from aggregates.
pub fn pcc(pred: &[f64], truth: &[f64]) -> CoreResult<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    let mean_p: f64 = pred.iter().sum::<f64>() / n;
    let mean_t: f64 = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let dp = p - mean_p;
        let dt = t - mean_t;
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
    }
    if var_t == 0.0 || var_p == 0.0 {
        return Err(CoreError::invalid("pcc undefined for constant series"));
    }
    let r = cov / (fp::sqrt(var_p) * fp::sqrt(var_t));
    // guard rounding just past +/-1
    Ok(r.clamp(-1.0, 1.0))
}

/// Fraction of positions where `pred_class == truth_class`.
pub fn accuracy(pred_class: &[usize], truth_class: &[usize]) -> CoreResult<f64> {
    if pred_class.len() != truth_class.len() || pred_class.is_empty() {
        return Err(CoreError::invalid("accuracy inputs must be equal-length and non-empty"));
    }
    let hits = pred_class
        .iter()
        .zip(truth_class)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / pred_class.len() as f64)
}

/// Computes the requested continuous metrics over flattened slices.
/// `Pcc` maps to `None` when undefined (constant truth).
pub fn evaluate_metrics(
    pred: &[f64],
    truth: &[f64],
    kinds: &[MetricKind],
) -> CoreResult<BTreeMap<MetricKind, Option<f64>>> {
    let mut out = BTreeMap::new();
    for kind in kinds {
        let value = match kind {
            MetricKind::Rmse => Some(rmse(pred, truth)?),
            MetricKind::Mae => Some(mae(pred, truth)?),
            MetricKind::Pcc => pcc(pred, truth).ok(),
            MetricKind::Acc => {
                return Err(CoreError::invalid(
                    "accuracy needs class ids; use accuracy()",
                ))
            }
        };
        out.insert(*kind, value);
    }
    Ok(out)
}

/// Mean of the defined values, ignoring `None`s; `None` when all undefined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}
