//! Chronological and random dataset splits.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::TimeSeriesPanel;
use crate::error::{CoreError, CoreResult};
use crate::fp;

fn check_ratios(ratios: (f64, f64, f64)) -> CoreResult<()> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if fp::abs(sum - 1.0) > 1e-9 {
        return Err(CoreError::invalid(format!("ratios must sum to 1, got {}", sum)));
    }
    if ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(CoreError::invalid("ratios must be non-negative"));
    }
    Ok(())
}

/// Contiguous train/val/test blocks in time order. Boundary indices are
/// `floor(r_train * T)` and `floor((r_train + r_val) * T)`.
pub fn chronological_split(
    panel: &TimeSeriesPanel,
    ratios: (f64, f64, f64),
) -> CoreResult<(TimeSeriesPanel, TimeSeriesPanel, TimeSeriesPanel)> {
    check_ratios(ratios)?;
    let t = panel.steps();
    let b1 = fp::floor(ratios.0 * t as f64) as usize;
    let b2 = fp::floor((ratios.0 + ratios.1) * t as f64) as usize;
    if b1 == 0 || b2 <= b1 || b2 >= t {
        return Err(CoreError::invalid(format!(
            "empty split blocks: boundaries {} and {} over {} steps",
            b1, b2, t
        )));
    }
    let rows = |lo: usize, hi: usize| -> CoreResult<TimeSeriesPanel> {
        let mut block = crate::matrix::DenseMatrix::zeros(hi - lo, panel.node_count());
        for (dst, src) in (lo..hi).enumerate() {
            block.row_mut(dst).copy_from_slice(panel.values().row(src));
        }
        TimeSeriesPanel::new(block)
    };
    Ok((rows(0, b1)?, rows(b1, b2)?, rows(b2, t)?))
}

/// Uniform random disjoint cover of `0..n`; floor sizing with the remainder
/// assigned to the training split. Deterministic for a fixed RNG seed.
pub fn node_split(
    n: usize,
    ratios: (f64, f64, f64),
    rng: &mut impl Rng,
) -> CoreResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    check_ratios(ratios)?;
    let n_val = fp::floor(ratios.1 * n as f64) as usize;
    let n_test = fp::floor(ratios.2 * n as f64) as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(CoreError::invalid("every node split must be non-empty"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok((train, val, test))
}
