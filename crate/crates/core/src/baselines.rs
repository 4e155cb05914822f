//! Master-coordinated parallel ADMM, the reference Tracking-ADMM reduces to
//! under complete mixing:
//!
//! ```text
//! x_i⁺ ∈ argmin_{X_i} f_i(x) + λ'A_i x + (c/2)‖A_i x − A_i x_i + d‖²
//! d⁺   = (1/N)(Σ A_i x_i⁺ − b)
//! λ⁺   = λ + c d⁺
//! ```

use std::time::Instant;

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::engine::{
    initial_points, should_stop, solve_local, with_pool, Algorithm, AgentState, EngineConfig, EngineError,
    IterationMetrics, StopReason, Trajectory,
};
use crate::linalg::{inf_norm, repeat, stack};
use crate::problem::ConstraintCoupledProblem;
use crate::qp::{self, QpSolution};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct ParallelState<T: Scalar> {
    /// Per-agent primal blocks.
    pub x: Vec<DVector<T>>,
    /// Master average violation `(1/N)(Σ A_i x_i − b)`.
    pub d: DVector<T>,
    pub lambda: DVector<T>,
    warm: Vec<Option<QpSolution<T>>>,
}

impl<T: Scalar> ParallelState<T> {
    pub fn new(
        problem: &ConstraintCoupledProblem<T>,
        x: Vec<DVector<T>>,
        lambda: DVector<T>,
    ) -> Result<Self, EngineError> {
        let d = average_violation(problem, &x)?;
        let n = x.len();
        Ok(Self {
            x,
            d,
            lambda,
            warm: vec![None; n],
        })
    }

    pub fn stacked_x(&self) -> DVector<T> {
        stack(&self.x)
    }
}

fn average_violation<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    x: &[DVector<T>],
) -> Result<DVector<T>, EngineError> {
    let r = problem.coupling_residual(&problem.stack(x)?)?;
    Ok(r / T::lit(problem.num_agents() as f64))
}

/// Master state from the engine's initializer with `λ_0 = 0`.
pub fn initialize_parallel<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
) -> Result<(ParallelState<T>, usize), EngineError> {
    config.check()?;
    let points = initial_points(problem, config)?;
    let iters = points.iter().map(|p| p.2).sum();
    let x = points.into_iter().map(|p| p.0).collect();
    let state = ParallelState::new(problem, x, DVector::zeros(problem.coupling_dim()))?;
    Ok((state, iters))
}

pub fn parallel_round<T: Scalar>(
    state: &ParallelState<T>,
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
    k: usize,
) -> Result<(ParallelState<T>, usize), EngineError> {
    let solved: Vec<Result<QpSolution<T>, EngineError>> = problem
        .agents()
        .par_iter()
        .enumerate()
        .map(|(i, agent)| {
            let inst = qp::local_step_instance(agent, &state.lambda, &state.d, &state.x[i], config.c)
                .map_err(|source| EngineError::Subproblem { agent: i, round: k, source })?;
            solve_local(&inst, config, state.warm[i].as_ref(), i, k)
        })
        .collect();
    let mut x = Vec::with_capacity(solved.len());
    let mut warm = Vec::with_capacity(solved.len());
    let mut iters = 0;
    for (i, r) in solved.into_iter().enumerate() {
        let sol = r?;
        if sol.x.iter().any(|v| !v.is_finite_value()) {
            return Err(EngineError::NonFinite { agent: i, round: k, what: "x" });
        }
        iters += sol.iterations;
        x.push(sol.x.clone());
        warm.push(Some(sol));
    }
    let d = average_violation(problem, &x)?;
    let lambda = &state.lambda + &d * config.c;
    Ok((ParallelState { x, d, lambda, warm }, iters))
}

/// Metrics of the master state in the engine's format: the trackers and
/// multipliers are the master's, so consensus errors vanish.
pub fn parallel_metrics<T: Scalar>(
    state: &ParallelState<T>,
    problem: &ConstraintCoupledProblem<T>,
    k: usize,
) -> Result<IterationMetrics<T>, EngineError> {
    let n = problem.num_agents();
    let p = problem.coupling_dim();
    let x = state.stacked_x();
    let ax = stack(
        &state
            .x
            .iter()
            .zip(problem.agents())
            .map(|(xi, a)| a.coupling().a() * xi)
            .collect::<Vec<_>>(),
    );
    let coupling_residual = problem.coupling_residual(&x)?;
    Ok(IterationMetrics {
        k,
        cost: problem.eval_cost(&x)?,
        coupling_inf: inf_norm(&coupling_residual),
        coupling_residual,
        d_bar: state.d.clone(),
        lambda_bar: state.lambda.clone(),
        e_d: T::zero(),
        e_l: T::zero(),
        e_d_stack: DVector::zeros(n * p),
        e_l_stack: DVector::zeros(n * p),
        lambda_stack: repeat(&state.lambda, n),
        z: ax - repeat(&state.d, n),
        x,
        qp_iterations: 0,
    })
}

pub fn run_parallel<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
) -> Result<Trajectory<T>, EngineError> {
    config.check()?;
    with_pool(config.threads, || run_parallel_inner(problem, config))?
}

fn run_parallel_inner<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    config: &EngineConfig<T>,
) -> Result<Trajectory<T>, EngineError> {
    let start = Instant::now();
    let (mut state, iters) = initialize_parallel(problem, config)?;
    let mut m0 = parallel_metrics(&state, problem, 0)?;
    m0.qp_iterations = iters;
    let mut history = vec![m0];
    let mut stop = StopReason::MaxIters;
    for k in 1..=config.max_iters {
        let (next, iters) = parallel_round(&state, problem, config, k)?;
        state = next;
        let mut m = parallel_metrics(&state, problem, k)?;
        m.qp_iterations = iters;
        let done = should_stop(&history[history.len() - 1], &m, config);
        history.push(m);
        if done {
            stop = StopReason::Converged;
            break;
        }
    }
    let states = state
        .x
        .iter()
        .map(|xi| {
            let mut s = AgentState::new(xi.clone(), state.d.clone(), state.lambda.clone());
            s.delta_last = state.d.clone();
            s.ell_last = state.lambda.clone();
            s
        })
        .collect();
    let traj = Trajectory {
        algorithm: Algorithm::ParallelAdmm,
        c: config.c,
        metrics: history,
        states,
        stop,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    info!(
        "parallel-admm: {:?} after {} rounds ({:.2}s)",
        traj.stop,
        traj.rounds(),
        traj.wall_time_secs
    );
    Ok(traj)
}
