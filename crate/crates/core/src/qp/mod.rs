//! Convex QP solver used for the local minimizations, dual-function
//! evaluations, initialization and the centralized reference solve.

mod admm;
mod kkt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{asymmetry, min_eigenvalue};
use crate::problem::{Agent, ConstraintCoupledProblem, Polyhedron, PrimalDualPair};
use crate::scalar::Scalar;

use admm::{solve_block_qp, BlockQp, QpBlock};

/// Default iteration cap for a single QP solve.
pub const DEFAULT_MAX_ITER: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("penalty parameter must be positive, got {0}")]
    NonPositivePenalty(f64),
    #[error("objective matrix is not symmetric positive semidefinite (min eigenvalue {0:e})")]
    NotConvex(f64),
    #[error("constraint set is infeasible")]
    Infeasible,
    #[error("no convergence after {iterations} iterations (primal {primal:e}, dual {dual:e})")]
    MaxIter { iterations: usize, primal: f64, dual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Fixed internal parameters of the splitting iteration.
#[derive(Debug, Clone, Copy)]
pub struct QpSettings<T> {
    pub rho: T,
    pub sigma: T,
    pub alpha: T,
    pub check_every: usize,
    pub polish: bool,
    /// Residual level (scaled by `1 + ‖q‖∞`) below which polishing is attempted.
    pub polish_gate: T,
    pub infeasibility_tol: T,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            rho: T::lit(0.1),
            sigma: T::lit(1e-6),
            alpha: T::lit(1.6),
            check_every: 10,
            polish: true,
            polish_gate: T::lit(1e-3),
            infeasibility_tol: T::lit(1e-6),
        }
    }
}

/// `min ½x'P0x + q0'x` over a polyhedron.
#[derive(Debug, Clone)]
pub struct QpInstance<T: Scalar> {
    pub p0: DMatrix<T>,
    pub q0: DVector<T>,
    pub region: Polyhedron<T>,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub x: DVector<T>,
    /// Multipliers for the box rows followed by the inequality rows.
    pub y: DVector<T>,
    pub primal_residual: T,
    pub dual_residual: T,
    pub iterations: usize,
    pub status: QpStatus,
    pub polished: bool,
}

impl<T: Scalar> QpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn into_result(self) -> Result<Self, QpError> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(QpError::Infeasible),
            QpStatus::MaxIter => Err(QpError::MaxIter {
                iterations: self.iterations,
                primal: self.primal_residual.to_f64_lossy(),
                dual: self.dual_residual.to_f64_lossy(),
            }),
        }
    }
}

impl<T: Scalar> QpInstance<T> {
    pub fn new(p0: DMatrix<T>, q0: DVector<T>, region: Polyhedron<T>) -> Result<Self, QpError> {
        let n = region.dim();
        if p0.shape() != (n, n) || q0.len() != n {
            return Err(QpError::Dimension(format!(
                "objective is {}x{} with {} linear terms, region has dimension {n}",
                p0.nrows(),
                p0.ncols(),
                q0.len()
            )));
        }
        let scale = T::one().max(crate::linalg::mat_inf_norm(&p0));
        if asymmetry(&p0) > T::lit(1e-12) * scale {
            return Err(QpError::NotConvex(f64::NAN));
        }
        let min_eig = min_eigenvalue(&p0);
        if min_eig < T::lit(-1e-10) * scale {
            return Err(QpError::NotConvex(min_eig.to_f64_lossy()));
        }
        Ok(Self { p0, q0, region })
    }

    fn to_block(&self) -> BlockQp<T> {
        let n = self.region.dim();
        BlockQp {
            blocks: vec![region_block(self.p0.clone(), &self.region)],
            q: self.q0.clone(),
            link: DMatrix::zeros(0, n),
            link_lower: DVector::zeros(0),
            link_upper: DVector::zeros(0),
        }
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        (x.dot(&(&self.p0 * x))) * T::lit(0.5) + self.q0.dot(x)
    }
}

fn region_block<T: Scalar>(p: DMatrix<T>, region: &Polyhedron<T>) -> QpBlock<T> {
    let rows = region.ineq_a().clone();
    QpBlock {
        p,
        lower: region.lower().clone(),
        upper: region.upper().clone(),
        row_lower: DVector::from_element(rows.nrows(), -T::infinity()),
        row_upper: region.ineq_b().clone(),
        rows,
    }
}

/// Solves with default settings and a cold start.
pub fn solve<T: Scalar>(qp: &QpInstance<T>, tol: T, max_iter: usize) -> QpSolution<T> {
    solve_with(qp, tol, max_iter, &QpSettings::default(), None)
}

/// Solves with explicit settings, optionally warm-started from a previous solution
/// of an instance over the same region.
pub fn solve_with<T: Scalar>(
    qp: &QpInstance<T>,
    tol: T,
    max_iter: usize,
    settings: &QpSettings<T>,
    warm: Option<&QpSolution<T>>,
) -> QpSolution<T> {
    let block = qp.to_block();
    let raw = solve_block_qp(&block, tol, max_iter, settings, warm.map(|w| (&w.x, &w.y)));
    QpSolution {
        x: raw.x,
        y: raw.y,
        primal_residual: raw.primal_residual,
        dual_residual: raw.dual_residual,
        iterations: raw.iterations,
        status: raw.status,
        polished: raw.polished,
    }
}

/// Builds the local minimization an agent performs each round:
///
/// `min f(x) + ell'Ax + (c/2)‖Ax − Ax_prev + delta‖²` over the agent's region,
/// with constant terms dropped.
pub fn local_step_instance<T: Scalar>(
    agent: &Agent<T>,
    ell: &DVector<T>,
    delta: &DVector<T>,
    x_prev: &DVector<T>,
    c: T,
) -> Result<QpInstance<T>, QpError> {
    if c <= T::zero() {
        return Err(QpError::NonPositivePenalty(c.to_f64_lossy()));
    }
    let a = agent.coupling().a();
    let (p, n) = a.shape();
    if ell.len() != p || delta.len() != p || x_prev.len() != n {
        return Err(QpError::Dimension(format!(
            "local step expects ell/delta of length {p} and x of length {n}"
        )));
    }
    let objective = agent.objective();
    let p0 = objective.quad() + a.tr_mul(a) * c;
    let shift = delta - a * x_prev;
    let q0 = objective.lin() + a.tr_mul(ell) + a.tr_mul(&shift) * c;
    Ok(QpInstance {
        p0,
        q0,
        region: agent.region().clone(),
    })
}

/// Solves the whole constraint-coupled problem as one QP with the coupling
/// equality appended, returning `x⋆`, the coupling multiplier `λ⋆` and `f⋆`.
pub fn solve_centralized<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    tol: T,
) -> Result<PrimalDualPair<T>, QpError> {
    solve_centralized_with(problem, tol, 200_000, &QpSettings::default())
}

pub fn solve_centralized_with<T: Scalar>(
    problem: &ConstraintCoupledProblem<T>,
    tol: T,
    max_iter: usize,
    settings: &QpSettings<T>,
) -> Result<PrimalDualPair<T>, QpError> {
    let n = problem.total_dim();
    let p = problem.coupling_dim();
    let mut blocks = Vec::with_capacity(problem.num_agents());
    let mut q = DVector::zeros(n);
    let mut link = DMatrix::zeros(p, n);
    let mut offset = 0;
    for agent in problem.agents() {
        let ni = agent.dim();
        blocks.push(region_block(agent.objective().quad().clone(), agent.region()));
        q.rows_mut(offset, ni).copy_from(agent.objective().lin());
        link.view_mut((0, offset), (p, ni)).copy_from(agent.coupling().a());
        offset += ni;
    }
    let qp = BlockQp {
        blocks,
        q,
        link,
        link_lower: problem.b().clone(),
        link_upper: problem.b().clone(),
    };
    let raw = solve_block_qp(&qp, tol, max_iter, settings, None);
    match raw.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(QpError::Infeasible),
        QpStatus::MaxIter => {
            return Err(QpError::MaxIter {
                iterations: raw.iterations,
                primal: raw.primal_residual.to_f64_lossy(),
                dual: raw.dual_residual.to_f64_lossy(),
            })
        }
    }
    let m = raw.y.len();
    let lambda = raw.y.rows(m - p, p).into_owned();
    let cost = problem
        .eval_cost(&raw.x)
        .map_err(|e| QpError::Dimension(e.to_string()))?;
    Ok(PrimalDualPair {
        x: raw.x,
        lambda,
        cost,
    })
}
