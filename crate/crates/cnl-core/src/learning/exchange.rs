//! Exchange backends: how an agency's embedding reaches its neighbors.
//!
//! One round = every agency publishes its current embedding, then every
//! agency fetches the sum of its neighbors' published embeddings. The
//! in-process [`PlaintextExchange`] sums real vectors directly; the node
//! service crate provides the Paillier-encrypted peer-to-peer backend
//! behind the same trait.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;

/// Result of fetching one agency's neighbor sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    /// Componentwise sum over contributing neighbors (same shape as the
    /// published embeddings; zeros when nobody contributed).
    pub sum: DenseMatrix,
    /// How many neighbor embeddings are in the sum.
    pub addend_count: usize,
    /// True when contributions are known to be missing (faults/timeouts).
    pub partial: bool,
}

/// One global exchange round, from an agency's perspective.
pub trait ExchangeBackend {
    /// Publishes agency `k`'s embedding for the current round.
    fn publish(&mut self, agency: usize, embedding: &DenseMatrix) -> CoreResult<()>;

    /// Fetches the neighbor sum for agency `k`. Every agency must have
    /// published first.
    fn fetch_neighbor_sum(&mut self, agency: usize) -> CoreResult<ExchangeOutcome>;

    /// Barrier marking the end of the round; clears published state.
    fn end_round(&mut self) -> CoreResult<()>;
}

/// Loss-free in-process backend over the agency-level global graph.
#[derive(Debug, Clone)]
pub struct PlaintextExchange {
    neighbors: Vec<Vec<usize>>,
    published: BTreeMap<usize, DenseMatrix>,
}

impl PlaintextExchange {
    pub fn new(global_graph: &Graph) -> Self {
        PlaintextExchange {
            neighbors: global_graph.adjacency_lists(),
            published: BTreeMap::new(),
        }
    }

    pub fn agency_count(&self) -> usize {
        self.neighbors.len()
    }
}

impl ExchangeBackend for PlaintextExchange {
    fn publish(&mut self, agency: usize, embedding: &DenseMatrix) -> CoreResult<()> {
        if agency >= self.neighbors.len() {
            return Err(CoreError::invalid("unknown agency id"));
        }
        self.published.insert(agency, embedding.clone());
        Ok(())
    }

    fn fetch_neighbor_sum(&mut self, agency: usize) -> CoreResult<ExchangeOutcome> {
        if agency >= self.neighbors.len() {
            return Err(CoreError::invalid("unknown agency id"));
        }
        let own = self
            .published
            .get(&agency)
            .ok_or_else(|| CoreError::invalid("agency has not published this round"))?;
        let mut sum = DenseMatrix::zeros(own.rows(), own.cols());
        let mut addends = 0;
        let mut partial = false;
        for &nb in &self.neighbors[agency] {
            match self.published.get(&nb) {
                Some(e) => {
                    sum = sum.add(e)?;
                    addends += 1;
                }
                None => partial = true,
            }
        }
        Ok(ExchangeOutcome {
            sum,
            addend_count: addends,
            partial,
        })
    }

    fn end_round(&mut self) -> CoreResult<()> {
        self.published.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AgencyPartition, build_global_graph, GlobalGraphMode};
    use alloc::vec;

    fn full_mesh(k: usize) -> PlaintextExchange {
        let p = AgencyPartition::new((0..k).collect(), k).unwrap();
        let g = build_global_graph(&p, GlobalGraphMode::FullyConnected, None).unwrap();
        PlaintextExchange::new(&g)
    }

    #[test]
    fn neighbor_sum_excludes_self() {
        let mut ex = full_mesh(3);
        for k in 0..3 {
            let e = DenseMatrix::from_rows(&[vec![(k + 1) as f64]]).unwrap();
            ex.publish(k, &e).unwrap();
        }
        let out = ex.fetch_neighbor_sum(0).unwrap();
        assert_eq!(out.sum.get(0, 0), 5.0); // 2 + 3
        assert_eq!(out.addend_count, 2);
        assert!(!out.partial);
    }

    #[test]
    fn missing_neighbor_marks_partial() {
        let mut ex = full_mesh(3);
        ex.publish(0, &DenseMatrix::zeros(1, 2)).unwrap();
        ex.publish(1, &DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap())
            .unwrap();
        let out = ex.fetch_neighbor_sum(0).unwrap();
        assert_eq!(out.addend_count, 1);
        assert!(out.partial);
    }

    #[test]
    fn round_barrier_clears_state() {
        let mut ex = full_mesh(2);
        ex.publish(0, &DenseMatrix::zeros(1, 1)).unwrap();
        ex.end_round().unwrap();
        assert!(ex.fetch_neighbor_sum(0).is_err());
    }
}
