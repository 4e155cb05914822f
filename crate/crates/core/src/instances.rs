//! Seeded random constraint-coupled instances used by tests, benchmarks and
//! the CLI.
//!
//! Every instance is feasible by construction: a point `x̂_i` is drawn inside
//! each local set and `b = Σ A_i x̂_i`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::{ConsensusMatrix, Graph, NetworkError};
use crate::problem::{
    split_rhs, Agent, ConstraintCoupledProblem, CouplingBlock, LocalObjective, Polyhedron, ProblemError, SplitMode,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RandomConfig {
    pub n_agents: usize,
    pub coupling_dim: usize,
    /// Inclusive range of local dimensions.
    pub dim_range: [usize; 2],
    /// Scale of the random PSD part of each cost curvature.
    pub quad_scale: f64,
    /// Added to the diagonal of each curvature.
    pub curvature: f64,
    /// General inequality rows per agent on top of the box `[-1, 1]`.
    pub general_rows: usize,
    pub seed: u64,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            n_agents: 10,
            coupling_dim: 4,
            dim_range: [2, 5],
            quad_scale: 1.0,
            curvature: 0.0,
            general_rows: 1,
            seed: 0,
        }
    }
}

impl RandomConfig {
    /// Better-conditioned variant (strongly convex costs) used for the
    /// long-run convergence checks.
    pub fn desk(seed: u64) -> Self {
        Self {
            quad_scale: 4.0,
            curvature: 1.0,
            seed,
            ..Self::default()
        }
    }
}

/// Edge probability of the desk-suite communication graphs.
pub const DESK_EDGE_PROB: f64 = 0.5;

/// Seeded Erdős–Rényi graph with [`DESK_EDGE_PROB`] and squared Metropolis
/// weights.
pub fn desk_network<T: Scalar>(n: usize, seed: u64) -> Result<ConsensusMatrix<T>, NetworkError> {
    let graph = Graph::erdos_renyi(n, DESK_EDGE_PROB, seed)?;
    Ok(ConsensusMatrix::metropolis(&graph)?.squared())
}

pub fn random_problem<T: Scalar>(config: &RandomConfig) -> Result<ConstraintCoupledProblem<T>, ProblemError> {
    let [lo, hi] = config.dim_range;
    if lo == 0 || lo > hi {
        return Err(ProblemError::Document(format!("bad dimension range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = config.coupling_dim;
    let lit = T::lit;
    let mut parts = Vec::with_capacity(config.n_agents);
    let mut b = DVector::<T>::zeros(p);
    for _ in 0..config.n_agents {
        let n = rng.gen_range(lo..=hi);
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let quad_f = (l.transpose() * &l) * (config.quad_scale / n as f64) + DMatrix::identity(n, n) * config.curvature;
        let quad_f = (&quad_f + quad_f.transpose()) * 0.5;
        let lin = DVector::from_fn(n, |_, _| lit(rng.gen_range(-1.0..1.0)));
        let a = DMatrix::from_fn(p, n, |_, _| lit(rng.gen_range(-1.0..1.0)));
        // interior point and rows that keep it strictly feasible
        let x_hat = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let g = DMatrix::from_fn(config.general_rows, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &g * &x_hat + DVector::from_fn(config.general_rows, |_, _| rng.gen_range(0.1..0.5));
        let region = Polyhedron::new(
            g.map(lit),
            h.map(lit),
            DVector::from_element(n, lit(-1.0)),
            DVector::from_element(n, lit(1.0)),
        )?;
        b += &a * x_hat.map(lit);
        let objective = LocalObjective::new(quad_f.map(lit), lin, T::zero())?;
        parts.push((objective, region, a));
    }
    let shares = split_rhs(&b, config.n_agents, SplitMode::Uniform)?;
    let agents = parts
        .into_iter()
        .zip(shares)
        .map(|((objective, region, a), share)| Agent::new(objective, region, CouplingBlock::new(a, share)))
        .collect::<Result<Vec<_>, _>>()?;
    ConstraintCoupledProblem::new(agents, b)
}
