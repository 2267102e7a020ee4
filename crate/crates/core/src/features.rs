//! Node-importance metrics and the per-node feature matrix fed to the encoder.
//!
//! All metrics are computed on the residual graph. Outputs are indexed by
//! local id (alive nodes in increasing global-id order, see [`Residual`]).

use crate::graph::{Graph, Residual};
use crate::numerics::Tensor;

pub const NUM_FEATURES: usize = 4;

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_TOL: f64 = 1e-8;
pub const PAGERANK_MAX_ITER: usize = 200;
pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 1000;

/// How the initial node features are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Degree, degree centrality, eigenvector centrality and PageRank.
    #[default]
    Aggregated,
    /// Normalized degree replicated into every column.
    DegreeOnly,
}

/// Power-iteration result.
#[derive(Debug, Clone, PartialEq)]
pub struct Centrality {
    pub scores: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn degree_vector(g: &Graph) -> Vec<usize> {
    Residual::new(g).adj.iter().map(Vec::len).collect()
}

/// Degree divided by `n_alive - 1`; zeros when at most one node is alive.
pub fn degree_centrality(g: &Graph) -> Vec<f64> {
    degree_centrality_of(&Residual::new(g))
}

fn degree_centrality_of(r: &Residual) -> Vec<f64> {
    let n = r.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let denom = (n - 1) as f64;
    r.adj.iter().map(|a| a.len() as f64 / denom).collect()
}

pub fn eigenvector_centrality(g: &Graph, tol: f64, max_iter: usize) -> Centrality {
    eigenvector_centrality_of(&Residual::new(g), tol, max_iter)
}

/// Power iteration on `A + I` (same eigenvectors as `A`, but no sign
/// oscillation on bipartite graphs), L2-normalized each step.
fn eigenvector_centrality_of(r: &Residual, tol: f64, max_iter: usize) -> Centrality {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = r.len();
    if n == 0 {
        return Centrality {
            scores: Vec::new(),
            converged: true,
            iterations: 0,
        };
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        for (i, nb) in r.adj.iter().enumerate() {
            next[i] = x[i] + nb.iter().map(|&j| x[j]).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            return Centrality {
                scores: x,
                converged: true,
                iterations: it,
            };
        }
    }
    Centrality {
        scores: x,
        converged: false,
        iterations: max_iter,
    }
}

pub fn pagerank(g: &Graph, damping: f64, tol: f64, max_iter: usize) -> Centrality {
    pagerank_of(&Residual::new(g), damping, tol, max_iter)
}

/// PageRank with each undirected edge followed in both directions. Isolated
/// nodes are dangling and spread their mass uniformly.
fn pagerank_of(r: &Residual, damping: f64, tol: f64, max_iter: usize) -> Centrality {
    let n = r.len();
    if n == 0 {
        return Centrality {
            scores: Vec::new(),
            converged: true,
            iterations: 0,
        };
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        let dangling: f64 = (0..n).filter(|&i| r.adj[i].is_empty()).map(|i| x[i]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        for i in 0..n {
            let inflow: f64 = r.adj[i].iter().map(|&j| x[j] / r.adj[j].len() as f64).sum();
            next[i] = base + damping * inflow;
        }
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            return Centrality {
                scores: x,
                converged: true,
                iterations: it,
            };
        }
    }
    Centrality {
        scores: x,
        converged: false,
        iterations: max_iter,
    }
}

/// Min-max scaling into [0, 1]; a constant column becomes all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

fn stack_columns(cols: [Vec<f64>; NUM_FEATURES]) -> Tensor {
    let n = cols[0].len();
    let mut data = Vec::with_capacity(n * NUM_FEATURES);
    for i in 0..n {
        for col in &cols {
            data.push(col[i]);
        }
    }
    Tensor::new([n, NUM_FEATURES], data)
}

/// `n_alive x 4` matrix with columns [degree, degree centrality,
/// eigenvector centrality, PageRank], each min-max normalized.
pub fn aggregate_features(g: &Graph) -> Tensor {
    features_of(&Residual::new(g), FeatureMode::Aggregated)
}

/// Normalized degree copied into all four columns.
pub fn degree_only_features(g: &Graph) -> Tensor {
    features_of(&Residual::new(g), FeatureMode::DegreeOnly)
}

pub fn features_of(r: &Residual, mode: FeatureMode) -> Tensor {
    let degree: Vec<f64> = r.adj.iter().map(|a| a.len() as f64).collect();
    let degree = min_max_normalize(&degree);
    match mode {
        FeatureMode::DegreeOnly => {
            stack_columns([degree.clone(), degree.clone(), degree.clone(), degree])
        }
        FeatureMode::Aggregated => {
            let dc = min_max_normalize(&degree_centrality_of(r));
            let ev = min_max_normalize(&eigenvector_centrality_of(r, EIGEN_TOL, EIGEN_MAX_ITER).scores);
            let pr = min_max_normalize(
                &pagerank_of(r, PAGERANK_DAMPING, PAGERANK_TOL, PAGERANK_MAX_ITER).scores,
            );
            stack_columns([degree, dc, ev, pr])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::simple(3, &[(0, 1), (1, 2)])
    }

    fn k4() -> Graph {
        Graph::simple(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    }

    fn star5() -> Graph {
        Graph::simple(5, &[(0, 1), (0, 2), (0, 3), (0, 4)])
    }

    #[test]
    fn degrees() {
        assert_eq!(degree_vector(&path3()), vec![1, 2, 1]);
        assert_eq!(degree_vector(&k4()), vec![3, 3, 3, 3]);
        assert_eq!(degree_vector(&path3().remove_nodes(&[1]).unwrap()), vec![0, 0]);
    }

    #[test]
    fn degree_centrality_cases() {
        assert_eq!(degree_centrality(&path3()), vec![0.5, 1.0, 0.5]);
        assert_eq!(degree_centrality(&star5())[0], 1.0);
        let single = path3().remove_nodes(&[0, 1]).unwrap();
        assert_eq!(degree_centrality(&single), vec![0.0]);
    }

    #[test]
    fn eigenvector_regular_is_uniform() {
        let ring = Graph::simple(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]);
        let c = eigenvector_centrality(&ring, EIGEN_TOL, EIGEN_MAX_ITER);
        assert!(c.converged);
        for s in &c.scores {
            assert!((s - 1.0 / 6f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvector_path_middle_dominates() {
        let c = eigenvector_centrality(&path3(), EIGEN_TOL, EIGEN_MAX_ITER);
        assert!(c.converged);
        assert!(c.scores[1] > c.scores[0] && c.scores[1] > c.scores[2]);
        let norm: f64 = c.scores.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvector_flags_non_convergence() {
        let g = crate::graph::generators::gen_ba(60, 2, 1).unwrap();
        let c = eigenvector_centrality(&g, 1e-300, 3);
        assert!(!c.converged);
        assert_eq!(c.iterations, 3);
    }

    #[test]
    fn pagerank_symmetric_and_dangling() {
        let ring = Graph::simple(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let pr = pagerank(&ring, PAGERANK_DAMPING, PAGERANK_TOL, PAGERANK_MAX_ITER);
        assert!(pr.scores.iter().all(|p| (p - 0.2).abs() < 1e-12));
        let isolated = Graph::simple(4, &[]);
        let pr = pagerank(&isolated, PAGERANK_DAMPING, PAGERANK_TOL, PAGERANK_MAX_ITER);
        assert!(pr.scores.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn empty_residual_gives_empty_outputs() {
        let g = path3().remove_nodes(&[0, 1, 2]).unwrap();
        assert!(eigenvector_centrality(&g, 1e-8, 10).scores.is_empty());
        assert!(pagerank(&g, 0.85, 1e-8, 10).scores.is_empty());
        assert_eq!(aggregate_features(&g).shape(), [0, 4]);
    }

    #[test]
    fn aggregated_constant_columns_vanish() {
        let f = aggregate_features(&k4());
        assert_eq!(f.shape(), [4, 4]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregated_path_degree_column() {
        let f = aggregate_features(&path3());
        assert_eq!(f.column(0), vec![0.0, 1.0, 0.0]);
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degree_only_replicates() {
        let f = degree_only_features(&path3());
        for c in 0..4 {
            assert_eq!(f.column(c), vec![0.0, 1.0, 0.0]);
        }
        assert!(degree_only_features(&k4()).data().iter().all(|&v| v == 0.0));
    }
}
