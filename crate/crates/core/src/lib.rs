//! Distributed optimization of constraint-coupled convex problems with
//! Tracking-ADMM, plus the tooling around it: consensus matrices, a local QP
//! solver, a centralized reference solver, a parallel-ADMM baseline,
//! Lyapunov certificates and a plug-in electric vehicle charging generator.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

pub mod baselines;
pub mod certify;
pub mod engine;
pub mod export;
pub mod instances;
pub mod linalg;
pub mod network;
pub mod pev;
pub mod problem;
pub mod qp;
pub mod scalar;

pub use scalar::Scalar;

pub type Problem = problem::ConstraintCoupledProblem<f64>;
pub type Agent = problem::Agent<f64>;
pub type Polyhedron = problem::Polyhedron<f64>;
pub type LocalObjective = problem::LocalObjective<f64>;
pub type CouplingBlock = problem::CouplingBlock<f64>;
pub type PrimalDualPair = problem::PrimalDualPair<f64>;
pub type ConsensusMatrix = network::ConsensusMatrix<f64>;
pub type EngineConfig = engine::EngineConfig<f64>;
pub type Trajectory = engine::Trajectory<f64>;
