//! Communication graphs and consensus (mixing) matrices.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{asymmetry, max_abs_eigenvalue, min_eigenvalue, sym_eigenvalues};
use crate::problem::{from_rows, to_rows, ProblemError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("a network needs at least two nodes, got {0}")]
    TooSmall(usize),
    #[error("edge ({0}, {1}) is invalid for a graph on {2} nodes")]
    BadEdge(usize, usize, usize),
    #[error("graph is disconnected: nodes {component:?} are unreachable from node 0")]
    Disconnected { component: Vec<usize> },
    #[error("no connected Erdős–Rényi graph found after {attempts} draws (n = {n}, p = {prob})")]
    NoConnectedDraw { n: usize, prob: f64, attempts: usize },
    #[error("weight matrix is {rows}x{cols}, graph has {n} nodes")]
    Shape { rows: usize, cols: usize, n: usize },
    #[error("edge probability must lie in (0, 1], got {0}")]
    BadProbability(f64),
    #[error(transparent)]
    Document(#[from] ProblemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Undirected graph without self-loops; every node implicitly talks to itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    neighbors: Vec<BTreeSet<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        let mut neighbors = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(NetworkError::BadEdge(i, j, n));
            }
            neighbors[i].insert(j);
            neighbors[j].insert(i);
        }
        Ok(Self { n, neighbors })
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges).expect("path edges are valid")
    }

    pub fn cycle(n: usize) -> Self {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::new(n, &edges).expect("cycle edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Self::new(n, &edges).expect("complete edges are valid")
    }

    pub fn star(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::new(n, &edges).expect("star edges are valid")
    }

    /// Seeded Erdős–Rényi draw, redrawn until connected.
    pub fn erdos_renyi(n: usize, prob: f64, seed: u64) -> Result<Self, NetworkError> {
        const ATTEMPTS: usize = 10_000;
        if n < 2 {
            return Err(NetworkError::TooSmall(n));
        }
        if !(prob > 0.0 && prob <= 1.0) {
            return Err(NetworkError::BadProbability(prob));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..ATTEMPTS {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen::<f64>() < prob {
                        edges.push((i, j));
                    }
                }
            }
            let g = Self::new(n, &edges)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(NetworkError::NoConnectedDraw {
            n,
            prob,
            attempts: ATTEMPTS,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| self.neighbors[i].range((i + 1)..).map(move |&j| (i, j)))
            .collect()
    }

    /// Nodes not reachable from node 0.
    pub fn unreachable(&self) -> Vec<usize> {
        if self.n == 0 {
            return Vec::new();
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..self.n).filter(|&i| !seen[i]).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.unreachable().is_empty()
    }

    /// Graph whose edges join nodes at distance one or two.
    pub fn square(&self) -> Self {
        let mut neighbors = self.neighbors.clone();
        for (i, nbrs) in neighbors.iter_mut().enumerate() {
            for &j in &self.neighbors[i] {
                nbrs.extend(self.neighbors[j].iter().copied().filter(|&k| k != i));
            }
        }
        Self { n: self.n, neighbors }
    }
}

/// Symmetric doubly stochastic mixing matrix tied to its communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix<T: Scalar> {
    w: DMatrix<T>,
    graph: Graph,
    psd_certified: bool,
}

fn psd_tol<T: Scalar>() -> T {
    T::lit(1e-10).max(T::default_epsilon() * T::lit(64.0))
}

fn entry_tol<T: Scalar>(n: usize) -> T {
    T::lit(1e-12).max(T::default_epsilon() * T::lit(16.0 * n as f64))
}

impl<T: Scalar> ConsensusMatrix<T> {
    /// Metropolis–Hastings weights `w_ij = 1 / (1 + max(deg_i, deg_j))`.
    pub fn metropolis(graph: &Graph) -> Result<Self, NetworkError> {
        let n = graph.num_nodes();
        if n < 2 {
            return Err(NetworkError::TooSmall(n));
        }
        let unreachable = graph.unreachable();
        if !unreachable.is_empty() {
            return Err(NetworkError::Disconnected { component: unreachable });
        }
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut off = T::zero();
            for j in graph.neighbors(i) {
                let wij = T::one() / T::lit((1 + graph.degree(i).max(graph.degree(j))) as f64);
                w[(i, j)] = wij;
                off += wij;
            }
            w[(i, i)] = T::one() - off;
        }
        Ok(Self::certify(w, graph.clone()))
    }

    /// The averaging matrix `𝒪 = 𝟙𝟙'/N` on the complete graph.
    pub fn averaging(n: usize) -> Result<Self, NetworkError> {
        if n < 2 {
            return Err(NetworkError::TooSmall(n));
        }
        let w = DMatrix::from_element(n, n, T::one() / T::lit(n as f64));
        Ok(Self {
            w,
            graph: Graph::complete(n),
            psd_certified: true,
        })
    }

    /// Wraps an explicit matrix. Without a graph, the sparsity pattern of `w`
    /// defines one. Nothing is enforced here; see [`ConsensusMatrix::validate`].
    pub fn from_matrix(w: DMatrix<T>, graph: Option<Graph>) -> Result<Self, NetworkError> {
        let n = w.nrows();
        let graph = match graph {
            Some(g) => g,
            None => {
                let edges: Vec<_> = (0..n)
                    .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| w[(i, j)] != T::zero() || w[(j, i)] != T::zero())
                    .collect();
                Graph::new(n, &edges)?
            }
        };
        if w.ncols() != n || graph.num_nodes() != n {
            return Err(NetworkError::Shape {
                rows: w.nrows(),
                cols: w.ncols(),
                n: graph.num_nodes(),
            });
        }
        Ok(Self::certify(w, graph))
    }

    fn certify(w: DMatrix<T>, graph: Graph) -> Self {
        let psd_certified = min_eigenvalue(&w) >= -psd_tol::<T>();
        Self { w, graph, psd_certified }
    }

    /// `½I + ½W`, PSD whenever `W` is doubly stochastic and symmetric.
    pub fn lazy(&self) -> Self {
        let n = self.size();
        let w = (&self.w + DMatrix::identity(n, n)) * T::lit(0.5);
        Self::certify(w, self.graph.clone())
    }

    /// `W²` on the two-hop graph; one round of it equals two rounds of `W`.
    pub fn squared(&self) -> Self {
        Self {
            w: &self.w * &self.w,
            graph: self.graph.square(),
            psd_certified: true,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn psd_certified(&self) -> bool {
        self.psd_certified
    }

    pub fn size(&self) -> usize {
        self.w.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.w[(i, j)]
    }

    /// `W̃ = W − 𝒪` at graph scale.
    pub fn deviation(&self) -> DMatrix<T> {
        let n = self.size();
        self.w.map(|v| v - T::one() / T::lit(n as f64))
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        sym_eigenvalues(&self.w)
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.size();
        let tol = entry_tol::<T>(n);
        let w = &self.w;
        let symmetric = asymmetry(w) <= tol;
        let doubly_stochastic = (0..n).all(|i| {
            let row = w.row(i).iter().fold(T::zero(), |a, &v| a + v);
            let col = w.column(i).iter().fold(T::zero(), |a, &v| a + v);
            (row - T::one()).abs() <= tol && (col - T::one()).abs() <= tol
        });
        let entries_in_range = w.iter().all(|&v| v >= -tol && v < T::one());
        let sparsity_match = (0..n).all(|i| {
            (0..n).all(|j| {
                let allowed = i == j || self.graph.has_edge(i, j);
                let positive = w[(i, j)] > T::zero();
                allowed == positive
            })
        });
        let connected = self.graph.is_connected();
        let sym = (w + w.transpose()) * T::lit(0.5);
        let min_eig = min_eigenvalue(&sym);
        let psd = min_eig >= -psd_tol::<T>();
        let dev = (&self.deviation() + self.deviation().transpose()) * T::lit(0.5);
        let spectral_gap = T::one() - max_abs_eigenvalue(&dev);
        let gap_positive = spectral_gap > T::zero();
        let passes = symmetric && doubly_stochastic && entries_in_range && sparsity_match && connected && psd && gap_positive;
        ValidationReport {
            n,
            symmetric,
            doubly_stochastic,
            entries_in_range,
            sparsity_match,
            connected,
            psd,
            min_eigenvalue: min_eig.to_f64_lossy(),
            spectral_gap: spectral_gap.to_f64_lossy(),
            passes,
        }
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            n: self.size(),
            edges: self.graph.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            weights: Some(to_rows(&self.w)),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_document())?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub n: usize,
    pub symmetric: bool,
    pub doubly_stochastic: bool,
    pub entries_in_range: bool,
    pub sparsity_match: bool,
    pub connected: bool,
    pub psd: bool,
    pub min_eigenvalue: f64,
    pub spectral_gap: f64,
    pub passes: bool,
}

impl ValidationReport {
    /// Connectivity plus symmetric, doubly stochastic weights on the graph.
    pub fn mixing_ok(&self) -> bool {
        self.symmetric
            && self.doubly_stochastic
            && self.entries_in_range
            && self.sparsity_match
            && self.connected
            && self.spectral_gap > 0.0
    }

    /// Human-readable list of failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.symmetric {
            out.push("matrix is not symmetric");
        }
        if !self.doubly_stochastic {
            out.push("rows or columns do not sum to 1");
        }
        if !self.entries_in_range {
            out.push("entries outside [0, 1)");
        }
        if !self.sparsity_match {
            out.push("nonzero pattern does not match the graph");
        }
        if !self.connected {
            out.push("graph is disconnected");
        }
        if self.spectral_gap <= 0.0 {
            out.push("spectral gap is not positive");
        }
        if !self.psd {
            out.push("matrix is not positive semidefinite");
        }
        out
    }
}

/// `{n, edges, weights?}`; weights are a dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

impl GraphDocument {
    pub fn graph(&self) -> Result<Graph, NetworkError> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::new(self.n, &edges)
    }

    /// Explicit weights when present, Metropolis weights otherwise.
    pub fn consensus<T: Scalar>(&self) -> Result<ConsensusMatrix<T>, NetworkError> {
        let graph = self.graph()?;
        match &self.weights {
            Some(rows) => {
                if rows.len() != self.n {
                    return Err(NetworkError::Shape {
                        rows: rows.len(),
                        cols: rows.first().map_or(0, Vec::len),
                        n: self.n,
                    });
                }
                ConsensusMatrix::from_matrix(from_rows(rows, self.n)?, Some(graph))
            }
            None => ConsensusMatrix::metropolis(&graph),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn path3_metropolis() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::path(3)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2.0]) / 3.0;
        assert!(close(w.matrix(), &expected, 1e-15));
        let eig = w.eigenvalues();
        for (got, want) in eig.iter().zip([0.0, 2.0 / 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(w.psd_certified());
        let report = w.validate();
        assert!(report.passes, "{report:?}");
        assert!((report.spectral_gap - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_node_complete_is_averaging() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::complete(2)).unwrap();
        assert!(close(w.matrix(), &DMatrix::from_element(2, 2, 0.5), 0.0));
        assert!(w.psd_certified());
        assert!(w.deviation().amax() == 0.0);
        assert!(close(w.squared().matrix(), w.matrix(), 1e-16));
    }

    #[test]
    fn four_cycle_fails_psd_until_squared() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::cycle(4)).unwrap();
        let eig = w.eigenvalues();
        for (got, want) in eig.iter().zip([-1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(!w.psd_certified());
        let report = w.validate();
        assert!(report.mixing_ok() && !report.psd && !report.passes);

        let sq = w.squared();
        for (got, want) in sq.eigenvalues().iter().zip([1.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(sq.validate().passes);
    }

    #[test]
    fn path3_squared_matches_product() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::path(3)).unwrap();
        let sq = w.squared();
        let m = w.matrix();
        let mut direct = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    direct[(i, j)] += m[(i, k)] * m[(k, j)];
                }
            }
        }
        assert!(close(sq.matrix(), &direct, 1e-15));
        assert!(sq.graph().has_edge(0, 2));
        assert!(sq.validate().passes);
    }

    #[test]
    fn identity_fails_validation() {
        let w = ConsensusMatrix::<f64>::from_matrix(DMatrix::identity(3, 3), None).unwrap();
        let r = w.validate();
        assert!(!r.passes && !r.entries_in_range && !r.connected);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        match ConsensusMatrix::<f64>::metropolis(&g) {
            Err(NetworkError::Disconnected { component }) => assert_eq!(component, vec![2, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn path3_deviation() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::path(3)).unwrap();
        let d = w.deviation();
        assert!(close(&d, &(w.matrix() - DMatrix::from_element(3, 3, 1.0 / 3.0)), 1e-16));
        assert!((max_abs_eigenvalue(&d) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lazy_variant_is_psd() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::cycle(4)).unwrap().lazy();
        assert!(w.psd_certified() && w.validate().passes);
    }

    #[test]
    fn document_round_trip() {
        let w = ConsensusMatrix::<f64>::metropolis(&Graph::cycle(5)).unwrap();
        let doc = w.to_document();
        let back: ConsensusMatrix<f64> = doc.consensus().unwrap();
        assert_eq!(back, w);
        let bare = GraphDocument {
            weights: None,
            ..doc
        };
        assert_eq!(bare.consensus::<f64>().unwrap(), w);
    }

    #[test]
    fn erdos_renyi_is_seeded_and_connected() {
        let a = Graph::erdos_renyi(12, 0.3, 7).unwrap();
        let b = Graph::erdos_renyi(12, 0.3, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
    }

    proptest! {
        #[test]
        fn random_metropolis_invariants(n in 2usize..16, prob in 0.2f64..0.9, seed in any::<u64>()) {
            let g = Graph::erdos_renyi(n, prob, seed).unwrap();
            let w = ConsensusMatrix::<f64>::metropolis(&g).unwrap();
            let m = w.matrix();
            for i in 0..n {
                prop_assert!((m.row(i).sum() - 1.0).abs() <= 1e-12);
                prop_assert!((m.column(i).sum() - 1.0).abs() <= 1e-12);
            }
            let report = w.validate();
            prop_assert!(report.mixing_ok());
            let sq = w.squared();
            prop_assert!(min_eigenvalue(sq.matrix()) >= -1e-10);
            prop_assert!(sq.validate().passes);
            let dev = w.deviation();
            prop_assert!(max_abs_eigenvalue(&dev) < 1.0);
            let ones = nalgebra::DVector::from_element(n, 1.0);
            prop_assert!((&dev * ones).amax() <= 1e-12);
        }

        #[test]
        fn deviation_annihilates_consensus(v in proptest::collection::vec(-10.0f64..10.0, 3), seed in any::<u64>()) {
            let g = Graph::erdos_renyi(6, 0.5, seed).unwrap();
            let dev = ConsensusMatrix::<f64>::metropolis(&g).unwrap().deviation();
            let lifted = crate::linalg::repeat(&nalgebra::DVector::from_vec(v), 6);
            let out = crate::linalg::mix_stacked(&dev, &lifted, 3);
            prop_assert!(out.amax() <= 1e-12 * 10.0);
        }
    }
}
