//! Numerical Lyapunov certificate for Tracking-ADMM and runtime monitors for
//! the identities and inequalities its convergence argument rests on.
//!
//! Stacking the consensus errors as `e = [e_λ; c·e_d]` and `u = c(z − A_d x⋆)`,
//! the errors evolve as `e⁺ = F e + G (u⁺ − u)` with `F = [[W̃, W̃], [0, W̃]]`,
//! `G = [I; I]`. With `M = (I − W̃)⁻¹` the matrix
//!
//! ```text
//! P = [[2I, M − 2I], [M − 2I, M² − 2M + 2I]]
//! ```
//!
//! satisfies `H = [I 0] = G'P(I − F)`, and `Q = P − F'PF ≻ 0` as long as the
//! eigenvalues of `W̃` lie in `(−1/3, 1)`. All matrices live at graph scale;
//! the Kronecker lift `⊗ I_p` is applied implicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trajectory;
use crate::linalg::{inf_norm, lifted_bilinear, mat_inf_norm, min_eigenvalue, mix_stacked, stack, sym_eigenvalues};
use crate::network::ConsensusMatrix;
use crate::problem::{ConstraintCoupledProblem, PrimalDualPair};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("I − W̃ is singular; W does not mix")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct LyapunovCertificate<T: Scalar> {
    pub w_tilde: DMatrix<T>,
    pub f: DMatrix<T>,
    pub g: DMatrix<T>,
    pub h: DMatrix<T>,
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub min_eig_p: T,
    pub min_eig_q: T,
    /// `‖H − G'P(I − F)‖∞`.
    pub cross_term_error: T,
    /// Worst violation of `P₁ + P₂ = M` and `P₁ + 2P₂ + P₃ = M²`.
    pub block_relation_error: T,
    pub w_tilde_eigenvalues: Vec<T>,
    /// Coupling dimension used when lifting.
    pub lift: usize,
}

fn blocks<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>, d: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(c);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

impl<T: Scalar> LyapunovCertificate<T> {
    fn n(&self) -> usize {
        self.w_tilde.nrows()
    }

    fn block(&self, m: &DMatrix<T>, r: usize, c: usize) -> DMatrix<T> {
        let n = self.n();
        m.view((r * n, c * n), (n, n)).into_owned()
    }

    /// Both Lyapunov matrices are positive definite and the cross-term identity holds.
    pub fn is_certified(&self) -> bool {
        self.min_eig_p > T::zero() && self.min_eig_q > T::zero() && self.cross_term_error <= T::lit(1e-9)
    }

    /// `‖[a; b]‖²_X` for a lifted `2N×2N` block matrix `X`.
    fn lifted_form(&self, x: &DMatrix<T>, a: &DVector<T>, b: &DVector<T>) -> T {
        let p = self.lift;
        let (x11, x12, x22) = (self.block(x, 0, 0), self.block(x, 0, 1), self.block(x, 1, 1));
        lifted_bilinear(&x11, a, a, p) + lifted_bilinear(&x12, a, b, p) * T::lit(2.0) + lifted_bilinear(&x22, b, b, p)
    }

    pub fn report(&self) -> CertificateReport {
        let eig = &self.w_tilde_eigenvalues;
        CertificateReport {
            n: self.n(),
            p: self.lift,
            min_eig_p: self.min_eig_p.to_f64_lossy(),
            min_eig_q: self.min_eig_q.to_f64_lossy(),
            cross_term_error: self.cross_term_error.to_f64_lossy(),
            block_relation_error: self.block_relation_error.to_f64_lossy(),
            w_tilde_min_eigenvalue: eig.first().map_or(0.0, |v| v.to_f64_lossy()),
            w_tilde_max_eigenvalue: eig.last().map_or(0.0, |v| v.to_f64_lossy()),
            certified: self.is_certified(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificateReport {
    pub n: usize,
    pub p: usize,
    pub min_eig_p: f64,
    pub min_eig_q: f64,
    pub cross_term_error: f64,
    pub block_relation_error: f64,
    pub w_tilde_min_eigenvalue: f64,
    pub w_tilde_max_eigenvalue: f64,
    pub certified: bool,
}

/// Builds `F, G, H, P, Q` for `W` and coupling dimension `p`.
///
/// A non-PSD `W` is not an error: the certificate then reports `min_eig_q ≤ 0`.
pub fn build_certificate<T: Scalar>(w: &ConsensusMatrix<T>, p: usize) -> Result<LyapunovCertificate<T>, CertifyError> {
    let n = w.size();
    let wt = w.deviation();
    let eye = DMatrix::<T>::identity(n, n);
    let zero = DMatrix::<T>::zeros(n, n);
    let m = (&eye - &wt).lu().solve(&eye).ok_or(CertifyError::Singular)?;
    let m2 = &m * &m;
    let two = T::lit(2.0);
    let p1 = &eye * two;
    let p2 = &m - &eye * two;
    let p3 = &m2 - &m * two + &eye * two;
    let block_relation_error = mat_inf_norm(&(&p1 + &p2 - &m)).max(mat_inf_norm(&(&p1 + &p2 * two + &p3 - &m2)));

    let f = blocks(&wt, &wt, &zero, &wt);
    let mut g = DMatrix::zeros(2 * n, n);
    g.view_mut((0, 0), (n, n)).copy_from(&eye);
    g.view_mut((n, 0), (n, n)).copy_from(&eye);
    let mut h = DMatrix::zeros(n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&eye);
    let pm = blocks(&p1, &p2, &p2, &p3);
    let pm = (&pm + pm.transpose()) * T::lit(0.5);
    let q = &pm - f.transpose() * &pm * &f;
    let q = (&q + q.transpose()) * T::lit(0.5);
    let i2 = DMatrix::<T>::identity(2 * n, 2 * n);
    let cross_term_error = mat_inf_norm(&(&h - g.transpose() * &pm * (&i2 - &f)));
    let wsym = (&wt + wt.transpose()) * T::lit(0.5);
    Ok(LyapunovCertificate {
        w_tilde_eigenvalues: sym_eigenvalues(&wsym),
        min_eig_p: min_eigenvalue(&pm),
        min_eig_q: min_eigenvalue(&q),
        w_tilde: wt,
        f,
        g,
        h,
        p: pm,
        q,
        cross_term_error,
        block_relation_error,
        lift: p,
    })
}

/// Optimal pair in the form the monitors consume.
#[derive(Debug, Clone)]
pub struct ReferencePoint<T: Scalar> {
    pub lambda: DVector<T>,
    /// `A_d x⋆ = stack(A_i x_i⋆)`.
    pub adx: DVector<T>,
    pub cost: T,
}

impl<T: Scalar> ReferencePoint<T> {
    pub fn new(problem: &ConstraintCoupledProblem<T>, pair: &PrimalDualPair<T>) -> Result<Self, CertifyError> {
        let parts = problem
            .split(&pair.x)
            .map_err(|e| CertifyError::Dimension(e.to_string()))?;
        if pair.lambda.len() != problem.coupling_dim() {
            return Err(CertifyError::Dimension("multiplier length differs from p".into()));
        }
        let adx = stack(
            &parts
                .iter()
                .zip(problem.agents())
                .map(|(x, a)| a.coupling().a() * x)
                .collect::<Vec<_>>(),
        );
        Ok(Self {
            lambda: pair.lambda.clone(),
            adx,
            cost: pair.cost,
        })
    }
}

/// Quantities of one round the monitors need, extracted from the metrics.
struct Snapshot<'a, T: Scalar> {
    lambda_bar: &'a DVector<T>,
    e_l: &'a DVector<T>,
    e_d: &'a DVector<T>,
    z: &'a DVector<T>,
}

fn snapshot<T: Scalar>(m: &crate::engine::IterationMetrics<T>) -> Snapshot<'_, T> {
    Snapshot {
        lambda_bar: &m.lambda_bar,
        e_l: &m.e_l_stack,
        e_d: &m.e_d_stack,
        z: &m.z,
    }
}

fn check_dims<T: Scalar>(n: usize, p: usize, s: &Snapshot<'_, T>, r: &ReferencePoint<T>) -> Result<(), CertifyError> {
    let np = n * p;
    if s.lambda_bar.len() != p || s.e_l.len() != np || s.e_d.len() != np || s.z.len() != np || r.adx.len() != np {
        return Err(CertifyError::Dimension(format!(
            "expected stacked vectors of length {np} and averages of length {p}"
        )));
    }
    Ok(())
}

fn lyapunov_parts<T: Scalar>(
    s: &Snapshot<'_, T>,
    reference: &ReferencePoint<T>,
    cert: &LyapunovCertificate<T>,
    c: T,
) -> Result<(T, DVector<T>, DVector<T>), CertifyError> {
    let n = cert.n();
    let p = cert.lift;
    check_dims(n, p, s, reference)?;
    let dl = s.lambda_bar - &reference.lambda;
    let avg = dl.norm_squared() * T::lit(n as f64);
    let e1 = s.e_l.clone();
    let e2 = s.e_d * c;
    let u = (s.z - &reference.adx) * c;
    let cross = u.dot(&e1) * T::lit(2.0);
    let g1 = &u - &e1;
    let g2 = &u - &e2;
    let v = avg + cross + cert.lifted_form(&cert.p, &g1, &g2);
    Ok((v, e1, e2))
}

/// `V = N‖λ̄ − λ⋆‖² + 2u'He + ‖Gu − e‖²_P`.
pub fn lyapunov_value<T: Scalar>(
    metrics: &crate::engine::IterationMetrics<T>,
    reference: &ReferencePoint<T>,
    cert: &LyapunovCertificate<T>,
    c: T,
) -> Result<T, CertifyError> {
    Ok(lyapunov_parts(&snapshot(metrics), reference, cert, c)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DescentReport {
    /// `V_k` for every recorded round.
    pub values: Vec<f64>,
    /// `s_k = V_{k+1} − V_k + N‖λ̄_{k+1} − λ̄_k‖² + ‖e_k‖²_Q`.
    pub slacks: Vec<f64>,
    pub max_slack: f64,
    pub tolerance: f64,
    /// Largest observed `|2u'He|`.
    pub max_cross_term: f64,
    pub passes: bool,
}

/// Descent test of `V` along a trajectory; passes iff every slack is at most
/// `slack_tol · max(1, V_0)`.
pub fn check_descent<T: Scalar>(
    trajectory: &Trajectory<T>,
    reference: &ReferencePoint<T>,
    cert: &LyapunovCertificate<T>,
    slack_tol: f64,
) -> Result<DescentReport, CertifyError> {
    let c = trajectory.c;
    let n = T::lit(cert.n() as f64);
    let mut values = Vec::with_capacity(trajectory.metrics.len());
    let mut parts = Vec::with_capacity(trajectory.metrics.len());
    let mut max_cross: f64 = 0.0;
    for m in &trajectory.metrics {
        let s = snapshot(m);
        let (v, e1, e2) = lyapunov_parts(&s, reference, cert, c)?;
        let u = (s.z - &reference.adx) * c;
        max_cross = max_cross.max((u.dot(&e1) * T::lit(2.0)).abs().to_f64_lossy());
        values.push(v);
        parts.push((e1, e2));
    }
    let mut slacks = Vec::with_capacity(values.len().saturating_sub(1));
    for k in 0..values.len().saturating_sub(1) {
        let step = &trajectory.metrics[k + 1].lambda_bar - &trajectory.metrics[k].lambda_bar;
        let (e1, e2) = &parts[k];
        let s = values[k + 1] - values[k] + step.norm_squared() * n + cert.lifted_form(&cert.q, e1, e2);
        slacks.push(s.to_f64_lossy());
    }
    let v0 = values.first().map_or(0.0, |v| v.to_f64_lossy());
    let tolerance = slack_tol * v0.abs().max(1.0);
    let max_slack = slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DescentReport {
        values: values.iter().map(|v| v.to_f64_lossy()).collect(),
        passes: slacks.iter().all(|&s| s <= tolerance),
        slacks,
        max_slack,
        tolerance,
        max_cross_term: max_cross,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Prop1Report {
    /// `N‖λ̄_{k+1} − λ⋆‖² + 2c(z_{k+1} − A_d x⋆)'e_λ,{k+1} − N‖λ̄_k − λ⋆‖² + N‖λ̄_{k+1} − λ̄_k‖²`.
    pub slacks: Vec<f64>,
    pub max_slack: f64,
    pub tolerance: f64,
    pub passes: bool,
}

/// Per-round check of the dual-progress inequality against an optimal pair.
/// The tolerance is `slack_tol · max(1, V_0)` with `V_0` from the certificate
/// when one is given, else `N‖λ̄_0 − λ⋆‖²`.
pub fn check_prop1<T: Scalar>(
    trajectory: &Trajectory<T>,
    reference: &ReferencePoint<T>,
    cert: Option<&LyapunovCertificate<T>>,
    slack_tol: f64,
) -> Result<Prop1Report, CertifyError> {
    let c = trajectory.c;
    let first = trajectory
        .metrics
        .first()
        .ok_or_else(|| CertifyError::Dimension("empty trajectory".into()))?;
    let p = first.lambda_bar.len();
    let n_agents = first.z.len().checked_div(p).unwrap_or(0);
    let n = T::lit(n_agents as f64);
    let v0 = match cert {
        Some(cert) => lyapunov_value(first, reference, cert, c)?,
        None => (&first.lambda_bar - &reference.lambda).norm_squared() * n,
    };
    let mut slacks = Vec::new();
    for pair in trajectory.metrics.windows(2) {
        let (a, b) = (snapshot(&pair[0]), snapshot(&pair[1]));
        check_dims(n_agents, p, &b, reference)?;
        let lhs = (b.lambda_bar - &reference.lambda).norm_squared() * n
            + ((b.z - &reference.adx) * c).dot(b.e_l) * T::lit(2.0);
        let rhs = (a.lambda_bar - &reference.lambda).norm_squared() * n
            - (b.lambda_bar - a.lambda_bar).norm_squared() * n;
        slacks.push((lhs - rhs).to_f64_lossy());
    }
    let tolerance = slack_tol * v0.to_f64_lossy().abs().max(1.0);
    Ok(Prop1Report {
        max_slack: slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        passes: slacks.iter().all(|&s| s <= tolerance),
        slacks,
        tolerance,
    })
}

/// Largest per-round residuals of the algebraic identities the analysis uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IdentityReport {
    /// `max_k ‖d̄_k − (Σ A_i x_i,k − b)/N‖∞ / (1 + ‖b‖∞)`.
    pub tracking: f64,
    /// `max_k ‖λ̄_{k+1} − λ̄_k − c d̄_{k+1}‖∞ / (1 + ‖λ̄_k‖∞)`.
    pub average_dual: f64,
    /// `max_k ‖e_d,{k+1} − W̃e_d,k − (z_{k+1} − z_k)‖`.
    pub tracker_recursion: f64,
    /// `max_k ‖e_λ,{k+1} − W̃e_λ,k − c e_d,{k+1}‖`.
    pub dual_recursion: f64,
    pub rounds: usize,
}

pub fn identity_monitors<T: Scalar>(
    trajectory: &Trajectory<T>,
    problem: &ConstraintCoupledProblem<T>,
    w: &ConsensusMatrix<T>,
) -> IdentityReport {
    let n = T::lit(problem.num_agents() as f64);
    let p = problem.coupling_dim();
    let c = trajectory.c;
    let wt = w.deviation();
    let b_scale = T::one() + inf_norm(problem.b());
    let mut rep = IdentityReport {
        tracking: 0.0,
        average_dual: 0.0,
        tracker_recursion: 0.0,
        dual_recursion: 0.0,
        rounds: trajectory.rounds(),
    };
    for m in &trajectory.metrics {
        let r = inf_norm(&(&m.d_bar - &m.coupling_residual / n)) / b_scale;
        rep.tracking = rep.tracking.max(r.to_f64_lossy());
    }
    for pair in trajectory.metrics.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let l2 = inf_norm(&(&b.lambda_bar - &a.lambda_bar - &b.d_bar * c)) / (T::one() + inf_norm(&a.lambda_bar));
        rep.average_dual = rep.average_dual.max(l2.to_f64_lossy());
        let rd = &b.e_d_stack - mix_stacked(&wt, &a.e_d_stack, p) - (&b.z - &a.z);
        rep.tracker_recursion = rep.tracker_recursion.max(rd.norm().to_f64_lossy());
        let rl = &b.e_l_stack - mix_stacked(&wt, &a.e_l_stack, p) - &b.e_d_stack * c;
        rep.dual_recursion = rep.dual_recursion.max(rl.norm().to_f64_lossy());
    }
    rep
}
