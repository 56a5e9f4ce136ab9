//! Integrated-graph construction: local graph plus one virtual node.

use alloc::vec::Vec;

use crate::error::CoreResult;
use crate::graph::{Edge, Graph};

/// Virtual edges carry weight 1 before adjacency normalization.
pub const INTEGRATED_VIRTUAL_WEIGHT: f64 = 1.0;

/// Local graph plus a virtual node (id = n, the last node) connected to
/// every local node with `virtual_weight`. Restricting the result to the
/// original nodes recovers the local graph exactly.
pub fn integrated_graph(local: &Graph, virtual_weight: f64) -> CoreResult<Graph> {
    let n = local.node_count();
    let mut edges: Vec<Edge> = local.edges().to_vec();
    for i in 0..n {
        edges.push(Edge::weighted(i, n, virtual_weight));
    }
    Graph::with_directedness(n + 1, edges, local.is_directed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn local() -> Graph {
        Graph::new(3, vec![Edge::new(0, 1), Edge::new(1, 2)]).unwrap()
    }

    #[test]
    fn adds_one_virtual_node_with_full_degree() {
        let g = integrated_graph(&local(), 1.0).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edge_count(), 2 + 3);
        assert_eq!(g.degrees()[3], 3);
    }

    #[test]
    fn restriction_to_real_nodes_recovers_local_adjacency() {
        let l = local();
        let g = integrated_graph(&l, 1.0).unwrap();
        let a_local = l.adjacency_matrix();
        let a_int = g.adjacency_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a_int.get(i, j), a_local.get(i, j));
            }
        }
    }

    #[test]
    fn zero_weight_virtual_edges_leave_real_degrees_unchanged() {
        let l = local();
        let g = integrated_graph(&l, 0.0).unwrap();
        let a = g.adjacency_matrix();
        for i in 0..3 {
            assert_eq!(a.get(i, 3), 0.0);
        }
    }
}
