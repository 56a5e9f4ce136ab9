//! Sliding look-back windows over a time-series panel.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::graph::TimeSeriesPanel;
use crate::matrix::DenseMatrix;

/// Windowed samples: `inputs[s]` is nodes x T (each row one node's
/// look-back window, oldest first) and `targets[s]` the per-node value
/// `h` steps past the window end.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub inputs: Vec<DenseMatrix>,
    pub targets: Vec<Vec<f64>>,
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// All samples `(x[t-T+1..=t] -> x[t+h])` inside the panel. Apply this per
/// split block so windows never cross split boundaries.
pub fn make_windows(panel: &TimeSeriesPanel, lookback: usize, horizon: usize) -> CoreResult<WindowSet> {
    let steps = panel.steps();
    if lookback == 0 || horizon == 0 {
        return Err(CoreError::invalid("lookback and horizon must be positive"));
    }
    if steps < lookback + horizon {
        return Err(CoreError::invalid(format!(
            "panel length {} < lookback {} + horizon {}",
            steps, lookback, horizon
        )));
    }
    let n = panel.node_count();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for end in (lookback - 1)..(steps - horizon) {
        let mut window = DenseMatrix::zeros(n, lookback);
        for (col, t) in ((end + 1 - lookback)..=end).enumerate() {
            for node in 0..n {
                window.set(node, col, panel.values().get(t, node));
            }
        }
        inputs.push(window);
        targets.push(panel.values().row(end + horizon).to_vec());
    }
    Ok(WindowSet {
        inputs,
        targets,
        lookback,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(t: usize, n: usize) -> TimeSeriesPanel {
        let mut m = DenseMatrix::zeros(t, n);
        for i in 0..t {
            for j in 0..n {
                m.set(i, j, (i * 10 + j) as f64);
            }
        }
        TimeSeriesPanel::new(m).unwrap()
    }

    #[test]
    fn sample_count_arithmetic() {
        let w = make_windows(&panel(30, 2), 20, 5).unwrap();
        assert_eq!(w.len(), 6);
    }

    #[test]
    fn exact_length_yields_single_sample() {
        let w = make_windows(&panel(25, 1), 20, 5).unwrap();
        assert_eq!(w.len(), 1);
        // window covers t=0..19, target is t=24
        assert_eq!(w.inputs[0].get(0, 0), 0.0);
        assert_eq!(w.inputs[0].get(0, 19), 190.0);
        assert_eq!(w.targets[0][0], 240.0);
    }

    #[test]
    fn too_short_panel_rejected() {
        assert!(make_windows(&panel(24, 1), 20, 5).is_err());
    }

    #[test]
    fn window_rows_are_per_node_series() {
        let w = make_windows(&panel(10, 3), 4, 2).unwrap();
        // first sample: rows are nodes, columns times 0..3
        assert_eq!(w.inputs[0].get(2, 1), 12.0); // t=1, node=2
        assert_eq!(w.targets[0][1], 51.0); // t=5, node=1
    }
}
