//! Synthetic graph generators: Erdős–Rényi G(n, m) and Barabási–Albert.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{Edge, Graph};
use crate::error::{CoreError, CoreResult};

/// Uniform simple graph with exactly `n` nodes and `m` distinct edges.
pub fn generate_er(n: usize, m: usize, rng: &mut impl Rng) -> CoreResult<Graph> {
    let max_edges = n.saturating_mul(n.saturating_sub(1)) / 2;
    if m > max_edges {
        return Err(CoreError::invalid(format!(
            "m={} exceeds max simple-graph edge count {}",
            m, max_edges
        )));
    }
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    // Rejection sampling is fine at the densities we generate (m << n^2/2).
    while chosen.len() < m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        chosen.insert(key);
    }
    let edges = chosen.into_iter().map(|(a, b)| Edge::new(a, b)).collect();
    Graph::new(n, edges)
}

/// Preferential-attachment graph seeded with an `m_attach`-clique; each new
/// node attaches to `m_attach` distinct existing nodes with probability
/// proportional to degree.
pub fn generate_ba(n: usize, m_attach: usize, rng: &mut impl Rng) -> CoreResult<Graph> {
    if m_attach == 0 || m_attach >= n {
        return Err(CoreError::invalid(format!(
            "require 1 <= m_attach < n, got m_attach={} n={}",
            m_attach, n
        )));
    }
    let mut edges: Vec<Edge> = Vec::new();
    // Repeated-endpoint list: sampling an index uniformly from it realizes
    // degree-proportional selection.
    let mut endpoint_pool: Vec<usize> = Vec::new();
    for a in 0..m_attach {
        for b in (a + 1)..m_attach {
            edges.push(Edge::new(a, b));
            endpoint_pool.push(a);
            endpoint_pool.push(b);
        }
    }
    if m_attach == 1 {
        // Degenerate seed: a single node with no edges yet; attach the
        // second node uniformly.
        endpoint_pool.push(0);
    }
    for new_node in m_attach.max(1)..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m_attach {
            let pick = endpoint_pool[rng.gen_range(0..endpoint_pool.len())];
            if pick != new_node {
                targets.insert(pick);
            }
        }
        for &t in &targets {
            edges.push(Edge::new(new_node, t));
            endpoint_pool.push(new_node);
            endpoint_pool.push(t);
        }
    }
    Graph::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed_rng;

    #[test]
    fn er_forced_triangle() {
        let g = generate_er(3, 3, &mut seed_rng(0)).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn er_rejects_overfull() {
        assert!(generate_er(3, 4, &mut seed_rng(0)).is_err());
    }

    #[test]
    fn er_deterministic_per_seed() {
        let a = generate_er(300, 1200, &mut seed_rng(7)).unwrap();
        let b = generate_er(300, 1200, &mut seed_rng(7)).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn er_paper_scale_counts() {
        let g = generate_er(10_000, 50_000, &mut seed_rng(1)).unwrap();
        assert_eq!(g.node_count(), 10_000);
        assert_eq!(g.edge_count(), 50_000);
    }

    #[test]
    fn ba_complete_when_n_is_m_plus_one() {
        let g = generate_ba(5, 4, &mut seed_rng(0)).unwrap();
        assert_eq!(g.edge_count(), 10);
    }

    #[test]
    fn ba_paper_scale_edge_count() {
        let g = generate_ba(10_000, 5, &mut seed_rng(2)).unwrap();
        // m_attach-clique start: C(5,2) + (n-5)*5
        assert_eq!(g.edge_count(), 10 + (10_000 - 5) * 5);
    }

    #[test]
    fn ba_degree_distribution_heavy_tailed() {
        // Max degree should dominate the mean across seeds.
        for seed in 0..10 {
            let g = generate_ba(1000, 3, &mut seed_rng(seed)).unwrap();
            let degs = g.degrees();
            let mean = degs.iter().sum::<usize>() as f64 / degs.len() as f64;
            let max = *degs.iter().max().unwrap() as f64;
            assert!(
                max >= 5.0 * mean,
                "seed {}: max degree {} < 5x mean {}",
                seed,
                max,
                mean
            );
        }
    }

    #[test]
    fn ba_rejects_bad_attachment() {
        assert!(generate_ba(5, 5, &mut seed_rng(0)).is_err());
        assert!(generate_ba(5, 0, &mut seed_rng(0)).is_err());
    }
}
