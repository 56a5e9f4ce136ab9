//! Normalized-Laplacian spectral clustering.
//!
//! Pipeline: L_sym = I - D^{-1/2} A D^{-1/2} on the dense symmetric
//! adjacency, cyclic Jacobi eigendecomposition, the k eigenvectors of
//! smallest eigenvalue row-normalized, then seeded k-means++ with an
//! empty-cluster re-seed. Dense Jacobi is deliberate: the graphs this
//! crate targets stay well under a few thousand nodes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{AgencyPartition, Graph};
use crate::error::{CoreError, CoreResult};
use crate::fp;
use crate::matrix::DenseMatrix;

const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 64;
const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_MAX_RETRIES: usize = 10;
const DEGREE_GUARD: f64 = 1e-10;

/// Spectral clustering of `g` into `k` non-empty agencies.
pub fn spectral_partition(g: &Graph, k: usize, rng: &mut impl Rng) -> CoreResult<AgencyPartition> {
    let n = g.node_count();
    if k < 2 {
        return Err(CoreError::invalid("agency count must be at least 2"));
    }
    if k > n {
        return Err(CoreError::invalid(format!("k={} exceeds node count {}", k, n)));
    }
    let embedding = spectral_embedding(g, k);
    for attempt in 0..KMEANS_MAX_RETRIES {
        if let Some(assignment) = kmeans(&embedding, k, rng) {
            return AgencyPartition::new(assignment, k);
        }
        let _ = attempt;
    }
    Err(CoreError::Iteration(format!(
        "k-means produced an empty cluster in all {} attempts",
        KMEANS_MAX_RETRIES
    )))
}

/// Rows of the k smallest eigenvectors of L_sym, row-normalized.
fn spectral_embedding(g: &Graph, k: usize) -> DenseMatrix {
    let n = g.node_count();
    let a = g.adjacency_matrix();
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = a.row(i).iter().sum();
        inv_sqrt_deg[i] = 1.0 / fp::sqrt(deg + DEGREE_GUARD);
    }
    let mut lap = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let off = -inv_sqrt_deg[i] * a.get(i, j) * inv_sqrt_deg[j];
            lap.set(i, j, if i == j { 1.0 + off } else { off });
        }
    }
    let (eigenvalues, eigenvectors) = jacobi_eigen(&lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eigenvalues[x]
            .partial_cmp(&eigenvalues[y])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let mut emb = DenseMatrix::zeros(n, k);
    for (col, &src) in order.iter().take(k).enumerate() {
        for row in 0..n {
            emb.set(row, col, eigenvectors.get(row, src));
        }
    }
    for row in 0..n {
        let norm = fp::sqrt(fp::hypot_sq(emb.row(row)));
        if norm > 0.0 {
            for v in emb.row_mut(row) {
                *v /= norm;
            }
        }
    }
    emb
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvector columns), unsorted.
fn jacobi_eigen(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if fp::sqrt(2.0 * off) < JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if fp::abs(apq) < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (fp::abs(theta) + fp::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / fp::sqrt(t * t + 1.0);
                let s = t * c;
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for j in 0..n {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j);
                    a.set(p, j, c * apj - s * aqj);
                    a.set(q, j, s * apj + c * aqj);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a.get(i, i)).collect();
    (eigenvalues, v)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means run with k-means++ seeding; `None` if a cluster emptied.
fn kmeans(points: &DenseMatrix, k: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
    let n = points.rows();
    let dim = points.cols();
    let mut centers = DenseMatrix::zeros(k, dim);

    // k-means++ seeding
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut best_dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = best_dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in best_dist.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for i in 0..n {
            let d = sq_dist(points.row(i), centers.row(c));
            if d < best_dist[i] {
                best_dist[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _iter in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(points.row(i), centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = DenseMatrix::zeros(k, dim);
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += *v;
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return None;
        }
        for c in 0..k {
            for v in sums.row_mut(c).iter_mut() {
                *v /= counts[c] as f64;
            }
            centers.row_mut(c).copy_from_slice(sums.row(c));
        }
        if !changed {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return None;
    }
    Some(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::seed_rng;
    use alloc::collections::BTreeSet;

    fn two_triangles() -> Graph {
        Graph::new(
            6,
            vec![
                Edge::new(0, 1),
                Edge::new(1, 2),
                Edge::new(0, 2),
                Edge::new(3, 4),
                Edge::new(4, 5),
                Edge::new(3, 5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn recovers_two_disjoint_triangles() {
        let g = two_triangles();
        let p = spectral_partition(&g, 2, &mut seed_rng(0)).unwrap();
        // brute-force optimum: the components themselves (cut = 0)
        let a = p.agency_of(0);
        assert_eq!(p.agency_of(1), a);
        assert_eq!(p.agency_of(2), a);
        let b = p.agency_of(3);
        assert_ne!(a, b);
        assert_eq!(p.agency_of(4), b);
        assert_eq!(p.agency_of(5), b);
    }

    #[test]
    fn complete_graph_k4_gives_singletons() {
        let mut edges = vec![];
        for i in 0..4 {
            for j in (i + 1)..4 {
                edges.push(Edge::new(i, j));
            }
        }
        let g = Graph::new(4, edges).unwrap();
        let p = spectral_partition(&g, 4, &mut seed_rng(1)).unwrap();
        let distinct: BTreeSet<usize> = p.assignment().iter().copied().collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn er_graph_partition_deterministic_and_covering() {
        let g = crate::graph::generate_er(300, 1200, &mut seed_rng(2)).unwrap();
        let p1 = spectral_partition(&g, 5, &mut seed_rng(3)).unwrap();
        let p2 = spectral_partition(&g, 5, &mut seed_rng(3)).unwrap();
        assert_eq!(p1.assignment(), p2.assignment());
        for a in 0..5 {
            assert!(!p1.members(a).is_empty());
        }
    }

    #[test]
    fn recovers_k_disconnected_components() {
        // 3 components of different sizes
        let mut edges = vec![Edge::new(0, 1)];
        edges.extend([Edge::new(2, 3), Edge::new(3, 4), Edge::new(2, 4)]);
        edges.extend([Edge::new(5, 6), Edge::new(6, 7)]);
        let g = Graph::new(8, edges).unwrap();
        let p = spectral_partition(&g, 3, &mut seed_rng(4)).unwrap();
        let comp = g.components();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(
                    comp[i] == comp[j],
                    p.agency_of(i) == p.agency_of(j),
                    "nodes {} and {} disagree",
                    i,
                    j
                );
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let g = two_triangles();
        assert!(spectral_partition(&g, 1, &mut seed_rng(0)).is_err());
        assert!(spectral_partition(&g, 7, &mut seed_rng(0)).is_err());
    }

    #[test]
    fn jacobi_diagonalizes_small_symmetric_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (mut vals, _) = jacobi_eigen(&m);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-9);
        assert!((vals[1] - 3.0).abs() < 1e-9);
    }
}
