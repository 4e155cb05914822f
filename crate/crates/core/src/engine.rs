//! Tracking-ADMM over a simulated synchronous network.
//!
//! Every agent keeps a primal iterate `x_i`, a tracker `d_i` of the average
//! coupling violation and a local multiplier `λ_i`. One round:
//!
//! ```text
//! δ_i  = Σ_j w_ij d_j          ℓ_i = Σ_j w_ij λ_j
//! x_i⁺ ∈ argmin_{X_i} f_i(x) + ℓ_i'A_i x + (c/2)‖A_i x − A_i x_i + δ_i‖²
//! d_i⁺ = δ_i + A_i x_i⁺ − A_i x_i
//! λ_i⁺ = ℓ_i + c d_i⁺
//! ```

use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{block_mean, inf_norm, mix_stacked, repeat, stack};
use crate::network::ConsensusMatrix;
use crate::problem::{ConstraintCoupledProblem, ProblemError};
use crate::qp::{self, QpError, QpInstance, QpSettings, QpSolution, QpStatus};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("consensus matrix is {got}x{got}, problem has {expected} agents")]
    Size { expected: usize, got: usize },
    #[error("agent {agent}: local problem failed in round {round}: {source}")]
    Subproblem {
        agent: usize,
        round: usize,
        #[source]
        source: QpError,
    },
    #[error("non-finite value in agent {agent}'s {what} after round {round}")]
    NonFinite { agent: usize, round: usize, what: &'static str },
    #[error("custom starting point rejected: {0}")]
    BadStart(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    TrackingAdmm,
    ParallelAdmm,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::TrackingAdmm => "tracking-admm",
            Algorithm::ParallelAdmm => "parallel-admm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode<T: Scalar> {
    /// `x_i,0 ∈ argmin f_i` over `X_i`.
    CostMin,
    /// Supplied per-agent starting points (must lie in the local sets).
    Custom(Vec<DVector<T>>),
}

#[derive(Debug, Clone)]
pub struct EngineConfig<T: Scalar> {
    pub c: T,
    pub max_iters: usize,
    pub feas_tol: T,
    pub cons_tol: T,
    pub dual_tol: T,
    pub subproblem_tol: T,
    pub subproblem_max_iter: usize,
    pub init: InitMode<T>,
    /// Worker threads for the local solves; `None` uses rayon's global pool.
    pub threads: Option<usize>,
    /// Warm-start each local solve from the agent's previous one.
    pub warm_start: bool,
    /// Ignore the stop rule and always run `max_iters` rounds.
    pub fixed_budget: bool,
    pub qp_settings: QpSettings<T>,
}

impl<T: Scalar> Default for EngineConfig<T> {
    fn default() -> Self {
        Self {
            c: T::one(),
            max_iters: 1000,
            feas_tol: T::lit(1e-6),
            cons_tol: T::lit(1e-6),
            dual_tol: T::lit(1e-6),
            subproblem_tol: T::lit(1e-8),
            subproblem_max_iter: 50_000,
            init: InitMode::CostMin,
            threads: None,
            warm_start: true,
            fixed_budget: false,
            qp_settings: QpSettings::default(),
        }
    }
}

impl<T: Scalar> EngineConfig<T> {
    pub fn with_c(c: T) -> Self {
        Self {
            c,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), EngineError> {
        let positive = [
            ("c", self.c),
            ("feas_tol", self.feas_tol),
            ("cons_tol", self.cons_tol),
            ("dual_tol", self.dual_tol),
            ("subproblem_tol", self.subproblem_tol),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite_value()) {
                return Err(EngineError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.threads == Some(0) {
            return Err(EngineError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AgentState<T: Scalar> {
    pub x: DVector<T>,
    pub d: DVector<T>,
    pub lambda: DVector<T>,
    pub delta_last: DVector<T>,
    pub ell_last: DVector<T>,
    pub(crate) warm: Option<QpSolution<T>>,
}

impl<T: Scalar> AgentState<T> {
    pub fn new(x: DVector<T>, d: DVector<T>, lambda: DVector<T>) -> Self {
        let p = d.len();
        Self {
            x,
            d,
            lambda,
            delta_last: DVector::zeros(p),
            ell_last: DVector::zeros(p),
            warm: None,
        }
    }
}

/// Everything recorded about one round.
#[derive(Debug, Clone)]
pub struct IterationMetrics<T: Scalar> {
    pub k: usize,
    pub cost: T,
    /// `‖Σ A_i x_i − b‖∞`.
    pub coupling_inf: T,
    /// `Σ A_i x_i − b`.
    pub coupling_residual: DVector<T>,
    pub d_bar: DVector<T>,
    pub lambda_bar: DVector<T>,
    /// Euclidean norms of the stacked consensus errors.
    pub e_d: T,
    pub e_l: T,
    /// `d − 𝟙⊗d̄` and `λ − 𝟙⊗λ̄`, stacked by agent.
    pub e_d_stack: DVector<T>,
    pub e_l_stack: DVector<T>,
    /// Stacked local multipliers `λ_i`.
    pub lambda_stack: DVector<T>,
    /// `z = stack(A_i x_i) − 𝟙⊗d̄`.
    pub z: DVector<T>,
    /// Stacked primal iterate.
    pub x: DVector<T>,
    /// Local-solver iterations spent producing this round.
    pub qp_iterations: usize,
}

impl<T: Scalar> IterationMetrics<T> {
    pub fn d_bar_inf(&self) -> T {
        inf_norm(&self.d_bar)
    }

    /// `max_i ‖d_i − d̄‖∞`.
    pub fn consensus_inf(&self) -> T {
        inf_norm(&self.e_d_stack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub algorithm: Algorithm,
    pub c: T,
    pub metrics: Vec<IterationMetrics<T>>,
    pub states: Vec<AgentState<T>>,
    pub stop: StopReason,
    pub wall_time_secs: f64,
}

impl<T: Scalar> Trajectory<T> {
    /// Rounds actually executed (the initialization is round 0).
    pub fn rounds(&self) -> usize {
        self.metrics.last().map_or(0, |m| m.k)
    }

    pub fn last(&self) -> &IterationMetrics<T> {
        self.metrics.last().expect("a trajectory always holds the round-0 metrics")
    }

    pub fn qp_iterations(&self) -> usize {
        self.metrics.iter().map(|m| m.qp_iterations).sum()
    }
}

/// Per-round bookkeeping returned by [`round`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundLog {
    pub qp_iterations: usize,
    pub polished: usize,
}

pub(crate) fn solve_local<T: Scalar>(
    inst: &QpInstance<T>,
    config: &EngineConfig<T>,
    warm: Option<&QpSolution<T>>,
    agent: usize,
    round: usize,
) -> Result<QpSolution<T>, EngineError> {
    let warm = if config.warm_start { warm } else { None };
    let sol = qp::solve_with(
        inst,
        config.subproblem_tol,
        config.subproblem_max_iter,
        &config.qp_settings,
        warm,
    );
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        _ => Err(EngineError::Subproblem {
            agent,
            round,
            source: sol.clone().into_result().unwrap_err(),
        }),
    }
}

/// Starting points: either the local cost minimizers or the supplied ones.
pub(crate) fn initial_points<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
) -> Result<Vec<(DVector<T>, Option<QpSolution<T>>, usize)>, EngineError> {
    match &config.init {
        InitMode::CostMin => problem
            .agents()
            .par_iter()
            .enumerate()
            .map(|(i, agent)| {
                let inst = QpInstance {
                    p0: agent.objective().quad().clone(),
                    q0: agent.objective().lin().clone(),
                    region: agent.region().clone(),
                };
                let sol = solve_local(&inst, config, None, i, 0)?;
                Ok((sol.x.clone(), None, sol.iterations))
            })
            .collect(),
        InitMode::Custom(xs) => {
            if xs.len() != problem.num_agents() {
                return Err(EngineError::BadStart(format!(
                    "{} starting points for {} agents",
                    xs.len(),
                    problem.num_agents()
                )));
            }
            let tol = config.subproblem_tol.max(T::lit(1e-9));
            xs.iter()
                .zip(problem.agents())
                .enumerate()
                .map(|(i, (x, agent))| {
                    if x.len() != agent.dim() {
                        return Err(EngineError::BadStart(format!("agent {i}: wrong dimension")));
                    }
                    let viol = agent.region().violation(x);
                    if viol > tol {
                        return Err(EngineError::BadStart(format!(
                            "agent {i}: point violates its local set by {viol}"
                        )));
                    }
                    Ok((x.clone(), None, 0))
                })
                .collect()
        }
    }
}

/// Round-0 states: `d_i,0 = A_i x_i,0 − b_i`, `λ_i,0 = 0`.
pub fn initialize<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
) -> Result<(Vec<AgentState<T>>, RoundLog), EngineError> {
    config.check()?;
    let p = problem.coupling_dim();
    let points = initial_points(problem, config)?;
    let mut log = RoundLog::default();
    let states = points
        .into_iter()
        .zip(problem.agents())
        .map(|((x, warm, iters), agent)| {
            log.qp_iterations += iters;
            let d = agent.coupling().contribution(&x);
            let mut s = AgentState::new(x, d, DVector::zeros(p));
            s.warm = warm;
            s
        })
        .collect();
    Ok((states, log))
}

/// One synchronous round with mixing matrix `w` (any `N×N` matrix; the
/// caller is responsible for it being a valid consensus matrix).
pub fn round_with_matrix<T: Scalar>(
    states: &[AgentState<T>],
    w: &DMatrix<T>,
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
    k: usize,
) -> Result<(Vec<AgentState<T>>, RoundLog), EngineError> {
    let n = problem.num_agents();
    if w.nrows() != n || w.ncols() != n || states.len() != n {
        return Err(EngineError::Size {
            expected: n,
            got: w.nrows(),
        });
    }
    let p = problem.coupling_dim();
    let d_all = stack(&states.iter().map(|s| s.d.clone()).collect::<Vec<_>>());
    let l_all = stack(&states.iter().map(|s| s.lambda.clone()).collect::<Vec<_>>());
    let delta = mix_stacked(w, &d_all, p);
    let ell = mix_stacked(w, &l_all, p);

    let solved: Vec<Result<AgentState<T>, EngineError>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let agent = problem.agent(i);
            let delta_i = delta.rows(i * p, p).into_owned();
            let ell_i = ell.rows(i * p, p).into_owned();
            let inst = qp::local_step_instance(agent, &ell_i, &delta_i, &s.x, config.c)
                .map_err(|source| EngineError::Subproblem { agent: i, round: k, source })?;
            let sol = solve_local(&inst, config, s.warm.as_ref(), i, k)?;
            let a = agent.coupling().a();
            let d = (&delta_i + a * &sol.x) - a * &s.x;
            let lambda = &ell_i + &d * config.c;
            Ok(AgentState {
                x: sol.x.clone(),
                d,
                lambda,
                delta_last: delta_i,
                ell_last: ell_i,
                warm: Some(sol),
            })
        })
        .collect();

    let mut next = Vec::with_capacity(n);
    let mut log = RoundLog::default();
    for (i, r) in solved.into_iter().enumerate() {
        let s = r?;
        for (what, v) in [("x", &s.x), ("d", &s.d), ("lambda", &s.lambda)] {
            if v.iter().any(|x| !x.is_finite_value()) {
                return Err(EngineError::NonFinite { agent: i, round: k, what });
            }
        }
        if let Some(sol) = &s.warm {
            log.qp_iterations += sol.iterations;
            log.polished += usize::from(sol.polished);
        }
        next.push(s);
    }
    Ok((next, log))
}

pub fn round<T: Scalar>(
    states: &[AgentState<T>],
    w: &ConsensusMatrix<T>,
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
    k: usize,
) -> Result<(Vec<AgentState<T>>, RoundLog), EngineError> {
    round_with_matrix(states, w.matrix(), problem, config, k)
}

/// Averages, consensus errors and the auxiliary `z` for a set of states.
pub fn metrics<T: Scalar>(
    states: &[AgentState<T>],
    problem: &ConstraintCoupledProblem<T>,
    k: usize,
) -> Result<IterationMetrics<T>, EngineError> {
    let n = problem.num_agents();
    let p = problem.coupling_dim();
    let x = stack(&states.iter().map(|s| s.x.clone()).collect::<Vec<_>>());
    let d_all = stack(&states.iter().map(|s| s.d.clone()).collect::<Vec<_>>());
    let l_all = stack(&states.iter().map(|s| s.lambda.clone()).collect::<Vec<_>>());
    let d_bar = block_mean(&d_all, p);
    let lambda_bar = block_mean(&l_all, p);
    let e_d_stack = &d_all - repeat(&d_bar, n);
    let e_l_stack = &l_all - repeat(&lambda_bar, n);
    let ax = stack(
        &states
            .iter()
            .zip(problem.agents())
            .map(|(s, a)| a.coupling().a() * &s.x)
            .collect::<Vec<_>>(),
    );
    let z = ax - repeat(&d_bar, n);
    let coupling_residual = problem.coupling_residual(&x)?;
    Ok(IterationMetrics {
        k,
        cost: problem.eval_cost(&x)?,
        coupling_inf: inf_norm(&coupling_residual),
        coupling_residual,
        d_bar,
        lambda_bar,
        e_d: e_d_stack.norm(),
        e_l: e_l_stack.norm(),
        e_d_stack,
        e_l_stack,
        lambda_stack: l_all,
        z,
        x,
        qp_iterations: 0,
    })
}

/// The harness-level stop test (agents cannot evaluate it locally).
pub(crate) fn should_stop<T: Scalar>(
    prev: &IterationMetrics<T>,
    cur: &IterationMetrics<T>,
    config: &EngineConfig<T>,
) -> bool {
    !config.fixed_budget
        && cur.d_bar_inf() <= config.feas_tol
        && cur.consensus_inf() <= config.cons_tol
        && inf_norm(&(&cur.lambda_bar - &prev.lambda_bar)) <= config.dual_tol
}

pub(crate) fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, EngineError> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| EngineError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs Tracking-ADMM until the stop rule fires or `max_iters` rounds pass.
pub fn run<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    w: &ConsensusMatrix<T>,
    config: &EngineConfig<T>,
) -> Result<Trajectory<T>, EngineError> {
    config.check()?;
    if w.size() != problem.num_agents() {
        return Err(EngineError::Size {
            expected: problem.num_agents(),
            got: w.size(),
        });
    }
    with_pool(config.threads, || run_inner(problem, w.matrix(), config))?
}

fn run_inner<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    w: &DMatrix<T>,
    config: &EngineConfig<T>,
) -> Result<Trajectory<T>, EngineError> {
    let start = Instant::now();
    let (mut states, log) = initialize(problem, config)?;
    let mut m0 = metrics(&states, problem, 0)?;
    m0.qp_iterations = log.qp_iterations;
    let mut history = vec![m0];
    let mut stop = StopReason::MaxIters;
    for k in 1..=config.max_iters {
        let (next, log) = round_with_matrix(&states, w, problem, config, k)?;
        states = next;
        let mut m = metrics(&states, problem, k)?;
        m.qp_iterations = log.qp_iterations;
        debug!(
            "round {k}: cost {} |Ax-b| {} eD {} eL {}",
            m.cost, m.coupling_inf, m.e_d, m.e_l
        );
        let done = should_stop(&history[history.len() - 1], &m, config);
        history.push(m);
        if done {
            stop = StopReason::Converged;
            break;
        }
    }
    let traj = Trajectory {
        algorithm: Algorithm::TrackingAdmm,
        c: config.c,
        metrics: history,
        states,
        stop,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    info!(
        "tracking-admm: {:?} after {} rounds ({:.2}s)",
        traj.stop,
        traj.rounds(),
        traj.wall_time_secs
    );
    Ok(traj)
}
