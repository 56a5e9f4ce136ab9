//! Embedding records and agency pooling.

use alloc::vec::Vec;

use crate::error::CoreResult;
use crate::matrix::DenseMatrix;
use crate::nn::mean_pool;

/// One agency's embedding state for one exchange round.
#[derive(Debug, Clone)]
pub struct EmbeddingRecord {
    /// Per-node local embeddings (nodes x dim).
    pub local: DenseMatrix,
    /// Pooled agency embedding (dim).
    pub agency: Vec<f64>,
    /// Whether `agency` has been fused with neighbor information.
    pub fused: bool,
    /// Exchange round this record belongs to.
    pub round: usize,
    /// (addend_count, partial) metadata from the last fetch, when fused.
    pub addends: Option<(usize, bool)>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.local.cols()
    }
}

/// Pools all local node embeddings into the agency embedding (mean).
pub fn pool_agency(local: &DenseMatrix) -> CoreResult<EmbeddingRecord> {
    let rows: Vec<usize> = (0..local.rows()).collect();
    let agency = mean_pool(local, &rows)?;
    Ok(EmbeddingRecord {
        local: local.clone(),
        agency,
        fused: false,
        round: 0,
        addends: None,
    })
}

/// Pools a per-window stack of local embeddings into a per-window agency
/// embedding series: `locals[s]` is nodes x dim, output row `s` is the
/// pooled embedding for window `s`.
pub fn pool_agency_series(locals: &[DenseMatrix]) -> CoreResult<DenseMatrix> {
    let mut out = DenseMatrix::zeros(0, 0);
    for local in locals {
        let rows: Vec<usize> = (0..local.rows()).collect();
        let pooled = mean_pool(local, &rows)?;
        out.push_row(&pooled)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_node_agency_pool_is_that_node() {
        let local = DenseMatrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let rec = pool_agency(&local).unwrap();
        assert_eq!(rec.agency, vec![1.0, -2.0, 3.0]);
        assert!(!rec.fused);
    }

    #[test]
    fn identical_rows_pool_to_that_row() {
        let local = DenseMatrix::from_rows(&[vec![0.5, 0.25], vec![0.5, 0.25]]).unwrap();
        assert_eq!(pool_agency(&local).unwrap().agency, vec![0.5, 0.25]);
    }

    #[test]
    fn three_known_rows_pool_to_mean() {
        let local =
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 3.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(pool_agency(&local).unwrap().agency, vec![2.0, 3.0]);
    }

    #[test]
    fn series_pooling_stacks_rows() {
        let a = DenseMatrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        let series = pool_agency_series(&[a, b]).unwrap();
        assert_eq!(series.rows(), 2);
        assert_eq!(series.get(0, 0), 2.0);
        assert_eq!(series.get(1, 0), 6.0);
    }
}
