//! Graph representation, synthetic generation, contagion simulation,
//! agency partitioning, and dataset splitting.

mod epidemic;
mod generate;
mod spectral;
mod split;

pub use epidemic::{simulate_sir, simulate_sis, SirOutcome};
pub use generate::{generate_ba, generate_er};
pub use spectral::spectral_partition;
pub use split::{chronological_split, node_split};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::matrix::DenseMatrix;

/// An edge with endpoints and weight. Undirected graphs store `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: usize, dst: usize) -> Self {
        Edge { src, dst, weight: 1.0 }
    }

    pub fn weighted(src: usize, dst: usize, weight: f64) -> Self {
        Edge { src, dst, weight }
    }
}

/// A simple graph with optional node features and labels.
///
/// Invariants enforced on construction: endpoints in range, no self-loops,
/// undirected edges stored once with `src < dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<Edge>,
    pub node_features: Option<DenseMatrix>,
    pub node_labels: Option<Vec<usize>>,
    directed: bool,
}

impl Graph {
    pub fn new(node_count: usize, edges: Vec<Edge>) -> CoreResult<Self> {
        Self::with_directedness(node_count, edges, false)
    }

    pub fn with_directedness(
        node_count: usize,
        edges: Vec<Edge>,
        directed: bool,
    ) -> CoreResult<Self> {
        let mut normalized = Vec::with_capacity(edges.len());
        for e in edges {
            if e.src >= node_count || e.dst >= node_count {
                return Err(CoreError::invalid(format!(
                    "edge ({},{}) out of range for {} nodes",
                    e.src, e.dst, node_count
                )));
            }
            if e.src == e.dst {
                return Err(CoreError::invalid(format!("self-loop at node {}", e.src)));
            }
            let e = if !directed && e.src > e.dst {
                Edge { src: e.dst, dst: e.src, weight: e.weight }
            } else {
                e
            };
            normalized.push(e);
        }
        Ok(Graph {
            node_count,
            edges: normalized,
            node_features: None,
            node_labels: None,
            directed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Neighbor lists (both directions for undirected graphs), each sorted.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            adj[e.src].push(e.dst);
            if !self.directed {
                adj[e.dst].push(e.src);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Weighted neighbor lists `(neighbor, weight)`, sorted by neighbor id.
    pub fn weighted_adjacency_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            adj[e.src].push((e.dst, e.weight));
            if !self.directed {
                adj[e.dst].push((e.src, e.weight));
            }
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|(n, _)| *n);
        }
        adj
    }

    /// Dense (weighted) adjacency matrix, symmetric for undirected graphs.
    pub fn adjacency_matrix(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.node_count, self.node_count);
        for e in &self.edges {
            a.add_at(e.src, e.dst, e.weight);
            if !self.directed {
                a.add_at(e.dst, e.src, e.weight);
            }
        }
        a
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.node_count];
        for e in &self.edges {
            deg[e.src] += 1;
            if !self.directed {
                deg[e.dst] += 1;
            }
        }
        deg
    }

    /// BFS hop distances from `start`; `usize::MAX` marks unreachable nodes.
    pub fn bfs_distances(&self, start: usize) -> Vec<usize> {
        let adj = self.adjacency_lists();
        let mut dist = vec![usize::MAX; self.node_count];
        let mut queue = alloc::collections::VecDeque::new();
        dist[start] = 0;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Connected components as a label per node (undirected reading).
    pub fn components(&self) -> Vec<usize> {
        let adj = self.adjacency_lists();
        let mut comp = vec![usize::MAX; self.node_count];
        let mut next = 0;
        for s in 0..self.node_count {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut queue = alloc::collections::VecDeque::from(vec![s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Assignment of every node to one of `K` agencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgencyPartition {
    assignment: Vec<usize>,
    agency_count: usize,
}

impl AgencyPartition {
    pub fn new(assignment: Vec<usize>, agency_count: usize) -> CoreResult<Self> {
        let mut seen = vec![false; agency_count];
        for &a in &assignment {
            if a >= agency_count {
                return Err(CoreError::invalid(format!(
                    "agency id {} >= K={}",
                    a, agency_count
                )));
            }
            seen[a] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(CoreError::invalid("every agency must own at least one node"));
        }
        Ok(AgencyPartition { assignment, agency_count })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn agency_count(&self) -> usize {
        self.agency_count
    }

    pub fn agency_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    /// Node ids owned by agency `a`, ascending.
    pub fn members(&self, a: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == a)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-node time series: rows are time steps, columns are nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: DenseMatrix,
}

impl TimeSeriesPanel {
    pub fn new(values: DenseMatrix) -> CoreResult<Self> {
        if !values.is_finite() {
            return Err(CoreError::NonFinite(alloc::string::String::from(
                "time series panel",
            )));
        }
        Ok(TimeSeriesPanel { values })
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn steps(&self) -> usize {
        self.values.rows()
    }

    pub fn node_count(&self) -> usize {
        self.values.cols()
    }

    /// Restricts the panel to the given node columns, order preserved.
    pub fn select_nodes(&self, nodes: &[usize]) -> CoreResult<TimeSeriesPanel> {
        let mut out = DenseMatrix::zeros(self.steps(), nodes.len());
        for t in 0..self.steps() {
            for (j, &n) in nodes.iter().enumerate() {
                if n >= self.node_count() {
                    return Err(CoreError::invalid("node index out of panel range"));
                }
                out.set(t, j, self.values.get(t, n));
            }
        }
        TimeSeriesPanel::new(out)
    }

    /// Aggregates node columns into per-agency count columns.
    pub fn aggregate_by_agency(&self, partition: &AgencyPartition) -> CoreResult<TimeSeriesPanel> {
        if partition.assignment().len() != self.node_count() {
            return Err(CoreError::invalid("partition/node count mismatch"));
        }
        let k = partition.agency_count();
        let mut out = DenseMatrix::zeros(self.steps(), k);
        for t in 0..self.steps() {
            for n in 0..self.node_count() {
                let a = partition.agency_of(n);
                out.add_at(t, a, self.values.get(t, n));
            }
        }
        TimeSeriesPanel::new(out)
    }
}

/// Result of cutting a graph down to one agency's nodes.
#[derive(Debug, Clone)]
pub struct LocalSubgraph {
    pub graph: Graph,
    /// old node id -> new dense id
    pub old_to_new: BTreeMap<usize, usize>,
    /// new dense id -> old node id, ascending in old id
    pub new_to_old: Vec<usize>,
}

/// Induced subgraph on agency `a`'s nodes; cross-agency edges dropped,
/// node ids relabeled densely in ascending old-id order.
pub fn local_subgraph(g: &Graph, p: &AgencyPartition, a: usize) -> CoreResult<LocalSubgraph> {
    if a >= p.agency_count() {
        return Err(CoreError::invalid(format!("unknown agency id {}", a)));
    }
    if p.assignment().len() != g.node_count() {
        return Err(CoreError::invalid("partition/node count mismatch"));
    }
    let members = p.members(a);
    let mut old_to_new = BTreeMap::new();
    for (new, &old) in members.iter().enumerate() {
        old_to_new.insert(old, new);
    }
    let mut edges = Vec::new();
    for e in g.edges() {
        if let (Some(&s), Some(&d)) = (old_to_new.get(&e.src), old_to_new.get(&e.dst)) {
            edges.push(Edge::weighted(s, d, e.weight));
        }
    }
    let mut graph = Graph::with_directedness(members.len(), edges, g.is_directed())?;
    if let Some(feats) = &g.node_features {
        graph.node_features = Some(feats.select_rows(&members)?);
    }
    if let Some(labels) = &g.node_labels {
        graph.node_labels = Some(members.iter().map(|&n| labels[n]).collect());
    }
    Ok(LocalSubgraph {
        graph,
        old_to_new,
        new_to_old: members,
    })
}

/// Number of edges whose endpoints live in different agencies.
pub fn cross_agency_edge_count(g: &Graph, p: &AgencyPartition) -> usize {
    g.edges()
        .iter()
        .filter(|e| p.agency_of(e.src) != p.agency_of(e.dst))
        .count()
}

/// How the agency-level global graph is wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalGraphMode {
    /// Every pair of agencies connected with unit weight (the default).
    FullyConnected,
    /// Agencies connected iff at least one cross-agency edge exists;
    /// weight = number of such edges.
    ByReality,
}

/// Builds the K-node agency graph.
pub fn build_global_graph(
    p: &AgencyPartition,
    mode: GlobalGraphMode,
    g: Option<&Graph>,
) -> CoreResult<Graph> {
    let k = p.agency_count();
    match mode {
        GlobalGraphMode::FullyConnected => {
            let mut edges = Vec::with_capacity(k * (k.saturating_sub(1)) / 2);
            for a in 0..k {
                for b in (a + 1)..k {
                    edges.push(Edge::new(a, b));
                }
            }
            Graph::new(k, edges)
        }
        GlobalGraphMode::ByReality => {
            let g = g.ok_or_else(|| {
                CoreError::invalid("by_reality mode requires the original graph")
            })?;
            if p.assignment().len() != g.node_count() {
                return Err(CoreError::invalid("partition/node count mismatch"));
            }
            let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for e in g.edges() {
                let (a, b) = (p.agency_of(e.src), p.agency_of(e.dst));
                if a != b {
                    let key = if a < b { (a, b) } else { (b, a) };
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
            let edges = counts
                .into_iter()
                .map(|((a, b), c)| Edge::weighted(a, b, c as f64))
                .collect();
            Graph::new(k, edges)
        }
    }
}

/// Fraction of edges whose endpoints share a label.
pub fn homophily(g: &Graph, labels: &[usize]) -> CoreResult<f64> {
    if labels.len() != g.node_count() {
        return Err(CoreError::invalid("labels must cover all nodes"));
    }
    let m = g.edge_count();
    if m == 0 {
        return Err(CoreError::invalid("homophily undefined for edgeless graph"));
    }
    let same = g
        .edges()
        .iter()
        .filter(|e| labels[e.src] == labels[e.dst])
        .count();
    Ok(same as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::new(3, vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(0, 2)]).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_self_loops() {
        assert!(Graph::new(2, vec![Edge::new(0, 2)]).is_err());
        assert!(Graph::new(2, vec![Edge::new(1, 1)]).is_err());
    }

    #[test]
    fn undirected_edges_normalized() {
        let g = Graph::new(3, vec![Edge::new(2, 0)]).unwrap();
        assert_eq!(g.edges()[0].src, 0);
        assert_eq!(g.edges()[0].dst, 2);
    }

    #[test]
    fn partition_requires_nonempty_agencies() {
        assert!(AgencyPartition::new(vec![0, 0, 0], 2).is_err());
        assert!(AgencyPartition::new(vec![0, 1, 0], 2).is_ok());
    }

    #[test]
    fn single_agency_subgraph_is_identity() {
        let g = triangle();
        let p = AgencyPartition::new(vec![0, 0, 0], 1).unwrap();
        let sub = local_subgraph(&g, &p, 0).unwrap();
        assert_eq!(sub.graph.node_count(), 3);
        assert_eq!(sub.graph.edge_count(), 3);
        assert_eq!(sub.new_to_old, vec![0, 1, 2]);
    }

    #[test]
    fn triangle_split_keeps_internal_edge() {
        // nodes 0,1 in agency 0; node 2 in agency 1
        let g = triangle();
        let p = AgencyPartition::new(vec![0, 0, 1], 2).unwrap();
        let sub = local_subgraph(&g, &p, 0).unwrap();
        assert_eq!(sub.graph.node_count(), 2);
        assert_eq!(sub.graph.edge_count(), 1);
        let other = local_subgraph(&g, &p, 1).unwrap();
        assert_eq!(other.graph.edge_count(), 0);
        assert_eq!(cross_agency_edge_count(&g, &p), 2);
    }

    #[test]
    fn edge_counts_partition_the_edge_set() {
        let g = triangle();
        let p = AgencyPartition::new(vec![0, 1, 1], 2).unwrap();
        let local: usize = (0..2)
            .map(|a| local_subgraph(&g, &p, a).unwrap().graph.edge_count())
            .sum();
        assert_eq!(local + cross_agency_edge_count(&g, &p), g.edge_count());
    }

    #[test]
    fn unknown_agency_rejected() {
        let g = triangle();
        let p = AgencyPartition::new(vec![0, 0, 1], 2).unwrap();
        assert!(local_subgraph(&g, &p, 2).is_err());
    }

    #[test]
    fn fully_connected_k5_has_ten_edges() {
        let p = AgencyPartition::new(vec![0, 1, 2, 3, 4], 5).unwrap();
        let gg = build_global_graph(&p, GlobalGraphMode::FullyConnected, None).unwrap();
        assert_eq!(gg.node_count(), 5);
        assert_eq!(gg.edge_count(), 10);
        assert!(gg.edges().iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn by_reality_empty_when_no_cross_edges() {
        // two disjoint triangles partitioned along components
        let mut edges = vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(0, 2)];
        edges.extend([Edge::new(3, 4), Edge::new(4, 5), Edge::new(3, 5)]);
        let g = Graph::new(6, edges).unwrap();
        let p = AgencyPartition::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let gg = build_global_graph(&p, GlobalGraphMode::ByReality, Some(&g)).unwrap();
        assert_eq!(gg.edge_count(), 0);
    }

    #[test]
    fn by_reality_counts_cross_edges() {
        let g = triangle();
        let p = AgencyPartition::new(vec![0, 0, 1], 2).unwrap();
        let gg = build_global_graph(&p, GlobalGraphMode::ByReality, Some(&g)).unwrap();
        assert_eq!(gg.edge_count(), 1);
        assert_eq!(gg.edges()[0].weight, 2.0);
    }

    #[test]
    fn by_reality_without_source_graph_fails() {
        let p = AgencyPartition::new(vec![0, 1], 2).unwrap();
        assert!(build_global_graph(&p, GlobalGraphMode::ByReality, None).is_err());
    }

    #[test]
    fn homophily_all_same_label_is_one() {
        let g = triangle();
        assert_eq!(homophily(&g, &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn homophily_path_half() {
        let g = Graph::new(3, vec![Edge::new(0, 1), Edge::new(1, 2)]).unwrap();
        assert_eq!(homophily(&g, &[0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn homophily_edgeless_undefined() {
        let g = Graph::new(2, vec![]).unwrap();
        assert!(homophily(&g, &[0, 1]).is_err());
    }
}
