//! Constraint-coupled problem instances:
//!
//! ```text
//! min Σ f_i(x_i)   s.t.  Σ A_i x_i = b,   x_i ∈ X_i
//! ```
//!
//! with convex quadratic `f_i`, bounded polyhedra `X_i` and per-agent shares
//! `b_i` of the right-hand side (`Σ b_i = b`).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{asymmetry, inf_norm, min_eigenvalue, stack};
use crate::qp::{self, QpError, QpInstance, QpSettings, QpStatus};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch{}: {what}", agent.map(|a| format!(" (agent {a})")).unwrap_or_default())]
    Dimension { agent: Option<usize>, what: String },
    #[error("cost curvature of agent {agent:?} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { agent: Option<usize>, asymmetry: f64 },
    #[error("cost of agent {agent:?} is not convex (min eigenvalue {min_eigenvalue:e})")]
    NotConvex { agent: Option<usize>, min_eigenvalue: f64 },
    #[error("box bounds must be finite with lower <= upper (coordinate {index})")]
    BadBox { index: usize },
    #[error("local constraint set of agent {agent:?} is empty")]
    Infeasible { agent: Option<usize> },
    #[error("feasibility check failed: {0}")]
    Solver(#[from] QpError),
    #[error("a constraint-coupled problem needs at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("right-hand side shares do not sum to b (deviation {deviation:e})")]
    ShareSum { deviation: f64 },
    #[error("expected {expected} right-hand side shares, got {got}")]
    ShareCount { expected: usize, got: usize },
    #[error("invalid problem document: {0}")]
    Document(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn dim_err(agent: Option<usize>, what: impl Into<String>) -> ProblemError {
    ProblemError::Dimension {
        agent,
        what: what.into(),
    }
}

/// `f(x) = ½ x'·quad·x + lin'x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObjective<T: Scalar> {
    quad: DMatrix<T>,
    lin: DVector<T>,
    offset: T,
}

impl<T: Scalar> LocalObjective<T> {
    pub fn new(quad: DMatrix<T>, lin: DVector<T>, offset: T) -> Result<Self, ProblemError> {
        let n = lin.len();
        if quad.shape() != (n, n) {
            return Err(dim_err(None, format!("quad is {:?}, lin has length {n}", quad.shape())));
        }
        let asym = asymmetry(&quad);
        if asym > T::lit(1e-12) {
            return Err(ProblemError::NotSymmetric {
                agent: None,
                asymmetry: asym.to_f64_lossy(),
            });
        }
        let min_eig = min_eigenvalue(&quad);
        if min_eig < T::lit(-1e-10) {
            return Err(ProblemError::NotConvex {
                agent: None,
                min_eigenvalue: min_eig.to_f64_lossy(),
            });
        }
        Ok(Self { quad, lin, offset })
    }

    pub fn linear(lin: DVector<T>) -> Self {
        let n = lin.len();
        Self {
            quad: DMatrix::zeros(n, n),
            lin,
            offset: T::zero(),
        }
    }

    pub fn quad(&self) -> &DMatrix<T> {
        &self.quad
    }

    pub fn lin(&self) -> &DVector<T> {
        &self.lin
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn eval(&self, x: &DVector<T>) -> T {
        x.dot(&(&self.quad * x)) * T::lit(0.5) + self.lin.dot(x) + self.offset
    }
}

/// `{x : ineq_a·x ≤ ineq_b, lower ≤ x ≤ upper}` with finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron<T: Scalar> {
    ineq_a: DMatrix<T>,
    ineq_b: DVector<T>,
    lower: DVector<T>,
    upper: DVector<T>,
}

impl<T: Scalar> Polyhedron<T> {
    /// Validates the box and certifies nonemptiness with a feasibility solve.
    pub fn new(
        ineq_a: DMatrix<T>,
        ineq_b: DVector<T>,
        lower: DVector<T>,
        upper: DVector<T>,
    ) -> Result<Self, ProblemError> {
        let n = lower.len();
        if upper.len() != n || ineq_a.ncols() != n || ineq_a.nrows() != ineq_b.len() {
            return Err(dim_err(
                None,
                format!(
                    "box has {n}/{} entries, inequality block is {:?} with {} bounds",
                    upper.len(),
                    ineq_a.shape(),
                    ineq_b.len()
                ),
            ));
        }
        for i in 0..n {
            if !(lower[i].is_finite_value() && upper[i].is_finite_value()) || lower[i] > upper[i] {
                return Err(ProblemError::BadBox { index: i });
            }
        }
        if ineq_a.iter().chain(ineq_b.iter()).any(|v| !v.is_finite_value()) {
            return Err(dim_err(None, "inequality data must be finite"));
        }
        let region = Self::unchecked(ineq_a, ineq_b, lower, upper);
        if region.ineq_a.nrows() > 0 {
            region.certify_nonempty()?;
        }
        Ok(region)
    }

    pub fn boxed(lower: DVector<T>, upper: DVector<T>) -> Result<Self, ProblemError> {
        let n = lower.len();
        Self::new(DMatrix::zeros(0, n), DVector::zeros(0), lower, upper)
    }

    pub(crate) fn unchecked(ineq_a: DMatrix<T>, ineq_b: DVector<T>, lower: DVector<T>, upper: DVector<T>) -> Self {
        Self {
            ineq_a,
            ineq_b,
            lower,
            upper,
        }
    }

    fn certify_nonempty(&self) -> Result<(), ProblemError> {
        let n = self.dim();
        let phase1 = QpInstance {
            p0: DMatrix::zeros(n, n),
            q0: DVector::zeros(n),
            region: self.clone(),
        };
        let sol = qp::solve_with(&phase1, T::lit(1e-7), 50_000, &QpSettings::default(), None);
        match sol.status {
            QpStatus::Optimal => Ok(()),
            QpStatus::Infeasible => Err(ProblemError::Infeasible { agent: None }),
            QpStatus::MaxIter => Err(ProblemError::Solver(QpError::MaxIter {
                iterations: sol.iterations,
                primal: sol.primal_residual.to_f64_lossy(),
                dual: sol.dual_residual.to_f64_lossy(),
            })),
        }
    }

    pub fn ineq_a(&self) -> &DMatrix<T> {
        &self.ineq_a
    }

    pub fn ineq_b(&self) -> &DVector<T> {
        &self.ineq_b
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Largest constraint violation of `x` (zero when `x` is inside).
    pub fn violation(&self, x: &DVector<T>) -> T {
        let mut worst = T::zero();
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        if self.ineq_a.nrows() > 0 {
            let ax = &self.ineq_a * x;
            for r in 0..ax.len() {
                worst = worst.max(ax[r] - self.ineq_b[r]);
            }
        }
        worst
    }
}

/// The agent's block `A_i` of the coupling constraint and its share `b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock<T: Scalar> {
    a: DMatrix<T>,
    b_share: DVector<T>,
}

impl<T: Scalar> CouplingBlock<T> {
    pub fn new(a: DMatrix<T>, b_share: DVector<T>) -> Self {
        Self { a, b_share }
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b_share(&self) -> &DVector<T> {
        &self.b_share
    }

    /// `A_i x − b_i`.
    pub fn contribution(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x - &self.b_share
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent<T: Scalar> {
    objective: LocalObjective<T>,
    region: Polyhedron<T>,
    coupling: CouplingBlock<T>,
}

impl<T: Scalar> Agent<T> {
    pub fn new(
        objective: LocalObjective<T>,
        region: Polyhedron<T>,
        coupling: CouplingBlock<T>,
    ) -> Result<Self, ProblemError> {
        let n = objective.dim();
        if region.dim() != n || coupling.a.ncols() != n || coupling.a.nrows() != coupling.b_share.len() {
            return Err(dim_err(
                None,
                format!(
                    "cost has dimension {n}, region {}, coupling block {:?} with share of length {}",
                    region.dim(),
                    coupling.a.shape(),
                    coupling.b_share.len()
                ),
            ));
        }
        Ok(Self {
            objective,
            region,
            coupling,
        })
    }

    pub fn objective(&self) -> &LocalObjective<T> {
        &self.objective
    }

    pub fn region(&self) -> &Polyhedron<T> {
        &self.region
    }

    pub fn coupling(&self) -> &CouplingBlock<T> {
        &self.coupling
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn with_share(&self, b_share: DVector<T>) -> Self {
        Self {
            coupling: CouplingBlock::new(self.coupling.a.clone(), b_share),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCoupledProblem<T: Scalar> {
    agents: Vec<Agent<T>>,
    b: DVector<T>,
    offsets: Vec<usize>,
}

impl<T: Scalar> ConstraintCoupledProblem<T> {
    pub fn new(agents: Vec<Agent<T>>, b: DVector<T>) -> Result<Self, ProblemError> {
        if agents.len() < 2 {
            return Err(ProblemError::TooFewAgents(agents.len()));
        }
        let p = b.len();
        for (i, agent) in agents.iter().enumerate() {
            if agent.coupling.a.nrows() != p {
                return Err(dim_err(
                    Some(i),
                    format!("coupling block has {} rows, b has {p}", agent.coupling.a.nrows()),
                ));
            }
        }
        let total = agents
            .iter()
            .fold(DVector::zeros(p), |acc: DVector<T>, a| acc + &a.coupling.b_share);
        let deviation = inf_norm(&(total - &b));
        if deviation > T::lit(1e-12) * T::one().max(inf_norm(&b)) {
            return Err(ProblemError::ShareSum {
                deviation: deviation.to_f64_lossy(),
            });
        }
        let mut offsets = Vec::with_capacity(agents.len() + 1);
        let mut acc = 0;
        for a in &agents {
            offsets.push(acc);
            acc += a.dim();
        }
        offsets.push(acc);
        Ok(Self { agents, b, offsets })
    }

    /// Replaces every agent's `b_i`.
    pub fn with_shares(&self, shares: Vec<DVector<T>>) -> Result<Self, ProblemError> {
        if shares.len() != self.agents.len() {
            return Err(ProblemError::ShareCount {
                expected: self.agents.len(),
                got: shares.len(),
            });
        }
        let agents = self.agents.iter().zip(shares).map(|(a, s)| a.with_share(s)).collect();
        Self::new(agents, self.b.clone())
    }

    pub fn agents(&self) -> &[Agent<T>] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &Agent<T> {
        &self.agents[i]
    }

    pub fn b(&self) -> &DVector<T> {
        &self.b
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn coupling_dim(&self) -> usize {
        self.b.len()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Start of agent `i`'s block in the stacked vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    fn check_len(&self, x: &DVector<T>) -> Result<(), ProblemError> {
        if x.len() != self.total_dim() {
            return Err(dim_err(
                None,
                format!("stacked vector has length {}, expected {}", x.len(), self.total_dim()),
            ));
        }
        Ok(())
    }

    /// Splits a stacked vector into per-agent blocks.
    pub fn split(&self, x: &DVector<T>) -> Result<Vec<DVector<T>>, ProblemError> {
        self.check_len(x)?;
        Ok((0..self.num_agents())
            .map(|i| x.rows(self.offsets[i], self.agents[i].dim()).into_owned())
            .collect())
    }

    pub fn stack(&self, parts: &[DVector<T>]) -> Result<DVector<T>, ProblemError> {
        if parts.len() != self.num_agents() || parts.iter().zip(&self.agents).any(|(p, a)| p.len() != a.dim()) {
            return Err(dim_err(None, "per-agent blocks do not match agent dimensions"));
        }
        Ok(stack(parts))
    }

    /// `Σ f_i(x_i)`.
    pub fn eval_cost(&self, x: &DVector<T>) -> Result<T, ProblemError> {
        self.check_len(x)?;
        Ok(self.agents.iter().enumerate().fold(T::zero(), |acc, (i, a)| {
            acc + a.objective.eval(&x.rows(self.offsets[i], a.dim()).into_owned())
        }))
    }

    /// `Σ A_i x_i − b`.
    pub fn coupling_residual(&self, x: &DVector<T>) -> Result<DVector<T>, ProblemError> {
        self.check_len(x)?;
        let mut r = -self.b.clone();
        for (i, a) in self.agents.iter().enumerate() {
            r += &a.coupling.a * x.rows(self.offsets[i], a.dim());
        }
        Ok(r)
    }

    /// `Σ f_i(x_i) + λ'(Σ A_i x_i − b)`.
    pub fn lagrangian(&self, x: &DVector<T>, lambda: &DVector<T>) -> Result<T, ProblemError> {
        if lambda.len() != self.coupling_dim() {
            return Err(dim_err(None, format!("multiplier has length {}", lambda.len())));
        }
        Ok(self.eval_cost(x)? + lambda.dot(&self.coupling_residual(x)?))
    }

    /// Largest violation of any local constraint set.
    pub fn local_violation(&self, x: &DVector<T>) -> Result<T, ProblemError> {
        let parts = self.split(x)?;
        Ok(parts
            .iter()
            .zip(&self.agents)
            .fold(T::zero(), |acc, (xi, a)| acc.max(a.region.violation(xi))))
    }

    pub fn to_document(&self) -> ProblemDocument {
        ProblemDocument {
            n: self.num_agents(),
            p: self.coupling_dim(),
            b: to_vec(&self.b),
            agents: self
                .agents
                .iter()
                .map(|a| AgentDocument {
                    quad: to_rows(&a.objective.quad),
                    lin: to_vec(&a.objective.lin),
                    offset: a.objective.offset.to_f64_lossy(),
                    ineq_a: to_rows(&a.region.ineq_a),
                    ineq_b: to_vec(&a.region.ineq_b),
                    lower: to_vec(&a.region.lower),
                    upper: to_vec(&a.region.upper),
                    a: to_rows(&a.coupling.a),
                    b_share: to_vec(&a.coupling.b_share),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ProblemDocument) -> Result<Self, ProblemError> {
        if doc.agents.len() != doc.n {
            return Err(ProblemError::Document(format!(
                "N = {} but {} agents listed",
                doc.n,
                doc.agents.len()
            )));
        }
        if doc.b.len() != doc.p {
            return Err(ProblemError::Document(format!("p = {} but b has {} entries", doc.p, doc.b.len())));
        }
        let mut agents = Vec::with_capacity(doc.n);
        for (i, ad) in doc.agents.iter().enumerate() {
            let n = ad.lin.len();
            let tag = |e: ProblemError| match e {
                ProblemError::Dimension { what, .. } => ProblemError::Dimension { agent: Some(i), what },
                ProblemError::NotSymmetric { asymmetry, .. } => ProblemError::NotSymmetric {
                    agent: Some(i),
                    asymmetry,
                },
                ProblemError::NotConvex { min_eigenvalue, .. } => ProblemError::NotConvex {
                    agent: Some(i),
                    min_eigenvalue,
                },
                ProblemError::Infeasible { .. } => ProblemError::Infeasible { agent: Some(i) },
                other => other,
            };
            let objective = LocalObjective::new(from_rows(&ad.quad, n)?, from_vec(&ad.lin), T::lit(ad.offset)).map_err(tag)?;
            let region = Polyhedron::new(
                from_rows(&ad.ineq_a, n)?,
                from_vec(&ad.ineq_b),
                from_vec(&ad.lower),
                from_vec(&ad.upper),
            )
            .map_err(tag)?;
            let coupling = CouplingBlock::new(from_rows(&ad.a, n)?, from_vec(&ad.b_share));
            agents.push(Agent::new(objective, region, coupling).map_err(tag)?);
        }
        Self::new(agents, from_vec(&doc.b))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path)?;
        let doc: ProblemDocument = serde_json::from_str(&text)?;
        Self::from_document(&doc)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), ProblemError> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Optimal primal/dual pair with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPair<T: Scalar> {
    pub x: DVector<T>,
    pub lambda: DVector<T>,
    pub cost: T,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrimalDualDocument {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub cost: f64,
}

impl<T: Scalar> PrimalDualPair<T> {
    pub fn to_document(&self) -> PrimalDualDocument {
        PrimalDualDocument {
            x: to_vec(&self.x),
            lambda: to_vec(&self.lambda),
            cost: self.cost.to_f64_lossy(),
        }
    }

    pub fn from_document(doc: &PrimalDualDocument) -> Self {
        Self {
            x: from_vec(&doc.x),
            lambda: from_vec(&doc.lambda),
            cost: T::lit(doc.cost),
        }
    }
}

/// How `b` is divided into the per-agent shares `b_i`.
#[derive(Debug, Clone)]
pub enum SplitMode<T: Scalar> {
    Uniform,
    Explicit(Vec<DVector<T>>),
}

/// Splits `b` into `n` shares whose ascending-order sum reproduces `b` exactly;
/// the last share absorbs rounding.
pub fn split_rhs<T: Scalar>(b: &DVector<T>, n: usize, mode: SplitMode<T>) -> Result<Vec<DVector<T>>, ProblemError> {
    if n == 0 {
        return Err(ProblemError::ShareCount { expected: 1, got: 0 });
    }
    let mut shares = match mode {
        SplitMode::Uniform => vec![b / T::lit(n as f64); n],
        SplitMode::Explicit(list) => {
            if list.len() != n {
                return Err(ProblemError::ShareCount {
                    expected: n,
                    got: list.len(),
                });
            }
            if list.iter().any(|s| s.len() != b.len()) {
                return Err(dim_err(None, "share length differs from b"));
            }
            let total = list.iter().fold(DVector::zeros(b.len()), |acc: DVector<T>, s| acc + s);
            let deviation = inf_norm(&(total - b));
            if deviation > T::lit(1e-9) {
                return Err(ProblemError::ShareSum {
                    deviation: deviation.to_f64_lossy(),
                });
            }
            list
        }
    };
    let head = shares[..n - 1]
        .iter()
        .fold(DVector::zeros(b.len()), |acc: DVector<T>, s| acc + s);
    let last = &mut shares[n - 1];
    for r in 0..b.len() {
        let mut v = b[r] - head[r];
        for _ in 0..8 {
            let gap = b[r] - (head[r] + v);
            if gap == T::zero() {
                break;
            }
            v += gap;
        }
        last[r] = v;
    }
    Ok(shares)
}

/// Local dual function `φ_i(λ) = min_{x ∈ X_i} f_i(x) + λ'(A_i x − b_i)` and a minimizer.
pub fn local_dual_value<T: Scalar>(agent: &Agent<T>, lambda: &DVector<T>, tol: T) -> Result<(T, DVector<T>), QpError> {
    let a = agent.coupling.a();
    if lambda.len() != a.nrows() {
        return Err(QpError::Dimension(format!(
            "multiplier has length {}, coupling has {} rows",
            lambda.len(),
            a.nrows()
        )));
    }
    let inst = QpInstance {
        p0: agent.objective.quad.clone(),
        q0: &agent.objective.lin + a.tr_mul(lambda),
        region: agent.region.clone(),
    };
    let sol = qp::solve(&inst, tol, qp::DEFAULT_MAX_ITER).into_result()?;
    let value = agent.objective.eval(&sol.x) + lambda.dot(&agent.coupling.contribution(&sol.x));
    Ok((value, sol.x))
}

/// JSON form of a problem; matrices are row-major arrays of arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemDocument {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    pub b: Vec<f64>,
    pub agents: Vec<AgentDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AgentDocument {
    pub quad: Vec<Vec<f64>>,
    pub lin: Vec<f64>,
    pub offset: f64,
    #[serde(rename = "ineqA")]
    pub ineq_a: Vec<Vec<f64>>,
    #[serde(rename = "ineqB")]
    pub ineq_b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "bShare")]
    pub b_share: Vec<f64>,
}

pub(crate) fn to_vec<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

pub(crate) fn from_vec<T: Scalar>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| T::lit(x)))
}

pub(crate) fn to_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)].to_f64_lossy()).collect())
        .collect()
}

pub(crate) fn from_rows<T: Scalar>(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<T>, ProblemError> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ProblemError::Document(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| T::lit(rows[r][c])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    /// Two scalar agents on [0,1], costs x1 and 2·x2, coupling x1 + x2 = 1.
    pub(crate) fn two_agent_lp() -> ConstraintCoupledProblem<f64> {
        let agent = |c: f64| {
            Agent::new(
                LocalObjective::linear(v(&[c])),
                Polyhedron::boxed(v(&[0.0]), v(&[1.0])).unwrap(),
                CouplingBlock::new(DMatrix::from_element(1, 1, 1.0), v(&[0.5])),
            )
            .unwrap()
        };
        ConstraintCoupledProblem::new(vec![agent(1.0), agent(2.0)], v(&[1.0])).unwrap()
    }

    #[test]
    fn split_uniform_examples() {
        let s = split_rhs(&v(&[2.0, 4.0]), 2, SplitMode::Uniform).unwrap();
        assert_eq!(s, vec![v(&[1.0, 2.0]), v(&[1.0, 2.0])]);
        let z = split_rhs(&v(&[0.0, 0.0]), 3, SplitMode::Uniform).unwrap();
        assert!(z.iter().all(|s| s.iter().all(|&x| x == 0.0)));
        let t = split_rhs(&v(&[1.0]), 3, SplitMode::Uniform).unwrap();
        assert_eq!((t[0][0] + t[1][0]) + t[2][0], 1.0);
    }

    #[test]
    fn split_explicit_rejects_bad_sum() {
        let err = split_rhs(&v(&[1.0]), 2, SplitMode::Explicit(vec![v(&[0.3]), v(&[0.3])]));
        assert!(matches!(err, Err(ProblemError::ShareSum { .. })));
        let err = split_rhs(&v(&[1.0]), 3, SplitMode::Explicit(vec![v(&[0.5]), v(&[0.5])]));
        assert!(matches!(err, Err(ProblemError::ShareCount { .. })));
        let ok = split_rhs(&v(&[1.0]), 2, SplitMode::Explicit(vec![v(&[0.25]), v(&[0.75])])).unwrap();
        assert_eq!(ok[0][0] + ok[1][0], 1.0);
    }

    #[test]
    fn cost_examples() {
        let p = two_agent_lp();
        assert_eq!(p.eval_cost(&v(&[1.0, 0.0])).unwrap(), 1.0);
        assert!(p.eval_cost(&v(&[1.0])).is_err());

        let lin_agent = |lo: f64| {
            Agent::new(
                LocalObjective::linear(v(&[1.0])),
                Polyhedron::boxed(v(&[lo]), v(&[10.0])).unwrap(),
                CouplingBlock::new(DMatrix::zeros(1, 1), v(&[0.0])),
            )
            .unwrap()
        };
        let q = ConstraintCoupledProblem::new(vec![lin_agent(0.0), lin_agent(0.0)], v(&[0.0])).unwrap();
        assert_eq!(q.eval_cost(&v(&[2.0, 3.0])).unwrap(), 5.0);

        let obj = LocalObjective::new(DMatrix::identity(2, 2), v(&[0.0, 0.0]), 0.0).unwrap();
        assert_eq!(obj.eval(&v(&[1.0, 1.0])), 1.0);
    }

    #[test]
    fn residual_and_lagrangian_examples() {
        let p = two_agent_lp();
        assert_eq!(p.coupling_residual(&v(&[1.0, 0.0])).unwrap()[0], 0.0);
        assert_eq!(p.coupling_residual(&v(&[0.0, 0.0])).unwrap()[0], -1.0);
        assert_eq!(p.lagrangian(&v(&[0.0, 0.0]), &v(&[-1.0])).unwrap(), 1.0);
        let x = v(&[0.3, 0.7]);
        assert_eq!(p.lagrangian(&x, &v(&[0.0])).unwrap(), p.eval_cost(&x).unwrap());
    }

    #[test]
    fn local_dual_examples() {
        let agent = |c: f64, share: f64| {
            Agent::new(
                LocalObjective::linear(v(&[c])),
                Polyhedron::boxed(v(&[0.0]), v(&[1.0])).unwrap(),
                CouplingBlock::new(DMatrix::from_element(1, 1, 1.0), v(&[share])),
            )
            .unwrap()
        };
        let (val, x) = local_dual_value(&agent(1.0, 0.0), &v(&[0.0]), 1e-10).unwrap();
        assert!(val.abs() < 1e-9 && x[0].abs() < 1e-9);
        let (val, x) = local_dual_value(&agent(1.0, 0.5), &v(&[-1.0]), 1e-10).unwrap();
        assert!((val - 0.5).abs() < 1e-9 && (-1e-9..=1.0 + 1e-9).contains(&x[0]));
        let (val, _) = local_dual_value(&agent(2.0, 0.5), &v(&[-2.0]), 1e-10).unwrap();
        assert!((val - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weak_duality_on_two_agent_lp() {
        let p = two_agent_lp();
        let feasible = v(&[0.4, 0.6]);
        let cost = p.eval_cost(&feasible).unwrap();
        for lam in [-3.0, -2.0, -1.5, -1.0, 0.0, 0.5] {
            let dual: f64 = p
                .agents()
                .iter()
                .map(|a| local_dual_value(a, &v(&[lam]), 1e-10).unwrap().0)
                .sum();
            assert!(dual <= cost + 1e-9, "λ={lam}: {dual} > {cost}");
        }
    }

    #[test]
    fn construction_rejects_bad_input() {
        let nonconvex = LocalObjective::new(DMatrix::from_element(1, 1, -1.0), v(&[0.0]), 0.0);
        assert!(matches!(nonconvex, Err(ProblemError::NotConvex { .. })));
        let asym = LocalObjective::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), v(&[0.0, 0.0]), 0.0);
        assert!(matches!(asym, Err(ProblemError::NotSymmetric { .. })));
        assert!(matches!(
            Polyhedron::boxed(v(&[1.0]), v(&[0.0])),
            Err(ProblemError::BadBox { index: 0 })
        ));
        let empty = Polyhedron::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            v(&[-1.0]),
            v(&[0.0, 0.0]),
            v(&[1.0, 1.0]),
        );
        assert!(matches!(empty, Err(ProblemError::Infeasible { .. })));
        let p = two_agent_lp();
        assert!(matches!(
            ConstraintCoupledProblem::new(vec![p.agent(0).clone()], v(&[1.0])),
            Err(ProblemError::TooFewAgents(1))
        ));
        assert!(matches!(
            ConstraintCoupledProblem::new(p.agents().to_vec(), v(&[2.0])),
            Err(ProblemError::ShareSum { .. })
        ));
    }

    #[test]
    fn document_round_trip() {
        let p = two_agent_lp();
        let doc = p.to_document();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"N\":2") && text.contains("\"bShare\"") && text.contains("\"ineqA\""));
        let back = ConstraintCoupledProblem::<f64>::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn uniform_split_resums_exactly(b in proptest::collection::vec(-1e6f64..1e6, 1..6), n in 1usize..40) {
            let b = DVector::from_vec(b);
            let shares = split_rhs(&b, n, SplitMode::Uniform).unwrap();
            for r in 0..b.len() {
                let total = shares.iter().fold(0.0, |acc, s| acc + s[r]);
                prop_assert_eq!(total, b[r]);
            }
        }

        #[test]
        fn residual_is_affine(x in proptest::collection::vec(-2.0f64..2.0, 2), y in proptest::collection::vec(-2.0f64..2.0, 2), a in 0.0f64..1.0) {
            let p = two_agent_lp();
            let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
            let mix = &x * a + &y * (1.0 - a);
            let lhs = p.coupling_residual(&mix).unwrap();
            let rhs = p.coupling_residual(&x).unwrap() * a + p.coupling_residual(&y).unwrap() * (1.0 - a);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn lagrangian_equals_cost_when_feasible(t in 0.0f64..1.0, lam in -5.0f64..5.0) {
            let p = two_agent_lp();
            let x = DVector::from_vec(vec![t, 1.0 - t]);
            let l = p.lagrangian(&x, &DVector::from_element(1, lam)).unwrap();
            prop_assert!((l - p.eval_cost(&x).unwrap()).abs() < 1e-12);
        }
    }
}
