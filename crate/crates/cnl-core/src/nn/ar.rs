//! Per-node autoregressive least-squares baseline.
//!
//! Each node gets its own AR(p) model fit directly for the forecast
//! horizon: x[t+h] regressed on [x[t], x[t-1], ..., x[t-p+1], 1] by ridge
//! least squares (lambda = 1e-8). No data or parameters are shared
//! between nodes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::graph::TimeSeriesPanel;

const RIDGE: f64 = 1e-8;

/// Fitted per-node AR coefficients (lags then intercept).
#[derive(Debug, Clone)]
pub struct ArPredictor {
    pub order: usize,
    pub horizon: usize,
    /// per node: [phi_0 (lag 0), ..., phi_{p-1} (lag p-1), intercept]
    coeffs: Vec<Vec<f64>>,
}

impl ArPredictor {
    /// Forecast for one node given the most recent `order` values,
    /// `lags[0]` being the newest.
    pub fn predict(&self, node: usize, lags: &[f64]) -> CoreResult<f64> {
        if lags.len() != self.order {
            return Err(CoreError::invalid("lag vector length != order"));
        }
        let c = &self.coeffs[node];
        let mut acc = c[self.order]; // intercept
        for (j, lag) in lags.iter().enumerate() {
            acc += c[j] * lag;
        }
        Ok(acc)
    }

    pub fn coefficients(&self, node: usize) -> &[f64] {
        &self.coeffs[node]
    }

    /// Applies the fitted models over a panel, predicting `x[t + h]` from
    /// the true history ending at `t`. Returns (pred, truth) columns per
    /// node for every valid `t`.
    pub fn forecast_panel(&self, panel: &TimeSeriesPanel) -> CoreResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let steps = panel.steps();
        let p = self.order;
        let h = self.horizon;
        if steps < p + h {
            return Err(CoreError::invalid("panel too short to forecast"));
        }
        let n = panel.node_count();
        let mut preds = vec![Vec::new(); n];
        let mut truths = vec![Vec::new(); n];
        for node in 0..n {
            for t in (p - 1)..(steps - h) {
                let mut lags = Vec::with_capacity(p);
                for j in 0..p {
                    lags.push(panel.values().get(t - j, node));
                }
                preds[node].push(self.predict(node, &lags)?);
                truths[node].push(panel.values().get(t + h, node));
            }
        }
        Ok((preds, truths))
    }
}

/// Fits one AR(p) model per node on the training panel.
pub fn ar_baseline(train: &TimeSeriesPanel, order: usize, horizon: usize) -> CoreResult<ArPredictor> {
    if order == 0 {
        return Err(CoreError::invalid("AR order must be positive"));
    }
    let steps = train.steps();
    if steps <= order + horizon {
        return Err(CoreError::invalid(format!(
            "series length {} too short for AR({}) with horizon {}",
            steps, order, horizon
        )));
    }
    let n = train.node_count();
    let width = order + 1; // lags + intercept
    let mut coeffs = Vec::with_capacity(n);
    for node in 0..n {
        // normal equations X'X beta = X'y with ridge
        let mut xtx = vec![vec![0.0; width]; width];
        let mut xty = vec![0.0; width];
        for t in (order - 1)..(steps - horizon) {
            let mut row = Vec::with_capacity(width);
            for j in 0..order {
                row.push(train.values().get(t - j, node));
            }
            row.push(1.0);
            let y = train.values().get(t + horizon, node);
            for a in 0..width {
                for b in 0..width {
                    xtx[a][b] += row[a] * row[b];
                }
                xty[a] += row[a] * y;
            }
        }
        for (a, row) in xtx.iter_mut().enumerate() {
            row[a] += RIDGE;
        }
        let beta = solve_linear(xtx, xty)?;
        coeffs.push(beta);
    }
    Ok(ArPredictor {
        order,
        horizon,
        coeffs,
    })
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> CoreResult<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if crate::fp::abs(a[r][col]) > crate::fp::abs(a[pivot][col]) {
                pivot = r;
            }
        }
        if crate::fp::abs(a[pivot][col]) < 1e-12 {
            return Err(CoreError::Iteration(format!(
                "singular AR design matrix at column {}",
                col
            )));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in (col + 1)..n {
            let factor = a[r][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= factor * a[col][c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in (col + 1)..n {
            acc -= a[col][c] * x[c];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DenseMatrix;
    use crate::nn::metrics::pcc;
    use crate::seed_rng;
    use rand::Rng;

    fn panel_from_series(series: &[f64]) -> TimeSeriesPanel {
        let m = DenseMatrix::from_vec(series.len(), 1, series.to_vec()).unwrap();
        TimeSeriesPanel::new(m).unwrap()
    }

    #[test]
    fn constant_series_predicts_constant() {
        let panel = panel_from_series(&[5.0; 30]);
        let ar = ar_baseline(&panel, 3, 1).unwrap();
        let pred = ar.predict(0, &[5.0, 5.0, 5.0]).unwrap();
        assert!((pred - 5.0).abs() < 1e-6);
    }

    #[test]
    fn doubling_series_recovers_coefficient_two() {
        let mut series = vec![1.0];
        for _ in 0..20 {
            let last = *series.last().unwrap();
            series.push(2.0 * last);
        }
        let panel = panel_from_series(&series);
        let ar = ar_baseline(&panel, 1, 1).unwrap();
        let c = ar.coefficients(0);
        assert!((c[0] - 2.0).abs() < 1e-4, "coefficient {:?}", c);
    }

    #[test]
    fn white_noise_has_negligible_holdout_correlation() {
        for seed in 0..10 {
            let mut rng = seed_rng(1000 + seed);
            let series: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let train = panel_from_series(&series[..120]);
            let test = panel_from_series(&series[120..]);
            let ar = ar_baseline(&train, 5, 1).unwrap();
            let (preds, truths) = ar.forecast_panel(&test).unwrap();
            let r = pcc(&preds[0], &truths[0]).unwrap();
            assert!(r.abs() < 0.3, "seed {}: pcc {}", seed, r);
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let panel = panel_from_series(&[1.0, 2.0, 3.0]);
        assert!(ar_baseline(&panel, 3, 1).is_err());
    }
}
