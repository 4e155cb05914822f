//! Operator-splitting QP iteration with active-set polishing.
//!
//! Problems have the form `min ½x'Px + q'x  s.t.  l ≤ Cx ≤ u` where the
//! variables split into blocks, `P` is block diagonal and the rows of `C`
//! are each block's box (identity) rows, each block's general rows, and a
//! set of dense linking rows spanning all blocks.
//!
//! The iteration is the over-relaxed ADMM splitting with a fixed penalty
//! vector (equality rows get a stiffer penalty). Once residuals are small the
//! active set read off the iterate is used to solve the reduced KKT system
//! directly; a polished point is accepted only when it is primal feasible,
//! stationary and has correctly signed multipliers, all within `tol`.

use nalgebra::{DMatrix, DVector};

use super::kkt::{ArrowFactor, BlockFactor, NotPositiveDefinite};
use super::{QpSettings, QpStatus};
use crate::linalg::inf_norm;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct QpBlock<T: Scalar> {
    pub p: DMatrix<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
    pub rows: DMatrix<T>,
    pub row_lower: DVector<T>,
    pub row_upper: DVector<T>,
}

impl<T: Scalar> QpBlock<T> {
    fn n(&self) -> usize {
        self.p.nrows()
    }

    fn m(&self) -> usize {
        self.n() + self.rows.nrows()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockQp<T: Scalar> {
    pub blocks: Vec<QpBlock<T>>,
    pub q: DVector<T>,
    pub link: DMatrix<T>,
    pub link_lower: DVector<T>,
    pub link_upper: DVector<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct RawSolution<T: Scalar> {
    pub x: DVector<T>,
    pub y: DVector<T>,
    pub primal_residual: T,
    pub dual_residual: T,
    pub iterations: usize,
    pub status: QpStatus,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    Inactive,
    Lower,
    Upper,
    Equality,
}

struct Layout {
    x_off: Vec<usize>,
    row_off: Vec<usize>,
    n: usize,
    m_local: usize,
    m: usize,
}

impl<T: Scalar> BlockQp<T> {
    fn layout(&self) -> Layout {
        let mut x_off = Vec::with_capacity(self.blocks.len());
        let mut row_off = Vec::with_capacity(self.blocks.len());
        let (mut n, mut m) = (0, 0);
        for b in &self.blocks {
            x_off.push(n);
            row_off.push(m);
            n += b.n();
            m += b.m();
        }
        Layout {
            x_off,
            row_off,
            n,
            m_local: m,
            m: m + self.link.nrows(),
        }
    }

    fn bounds(&self, lay: &Layout) -> (DVector<T>, DVector<T>) {
        let mut l = DVector::zeros(lay.m);
        let mut u = DVector::zeros(lay.m);
        for (b, &ro) in self.blocks.iter().zip(&lay.row_off) {
            let n = b.n();
            l.rows_mut(ro, n).copy_from(&b.lower);
            u.rows_mut(ro, n).copy_from(&b.upper);
            l.rows_mut(ro + n, b.rows.nrows()).copy_from(&b.row_lower);
            u.rows_mut(ro + n, b.rows.nrows()).copy_from(&b.row_upper);
        }
        let ml = self.link.nrows();
        l.rows_mut(lay.m_local, ml).copy_from(&self.link_lower);
        u.rows_mut(lay.m_local, ml).copy_from(&self.link_upper);
        (l, u)
    }

    fn mul_c(&self, lay: &Layout, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(lay.m);
        for (i, b) in self.blocks.iter().enumerate() {
            let (xo, ro, n) = (lay.x_off[i], lay.row_off[i], b.n());
            let xb = x.rows(xo, n);
            out.rows_mut(ro, n).copy_from(&xb);
            if b.rows.nrows() > 0 {
                let g = &b.rows * xb;
                out.rows_mut(ro + n, b.rows.nrows()).copy_from(&g);
            }
        }
        if self.link.nrows() > 0 {
            let lx = &self.link * x;
            out.rows_mut(lay.m_local, self.link.nrows()).copy_from(&lx);
        }
        out
    }

    fn mul_ct(&self, lay: &Layout, y: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(lay.n);
        for (i, b) in self.blocks.iter().enumerate() {
            let (xo, ro, n) = (lay.x_off[i], lay.row_off[i], b.n());
            let mut ob = y.rows(ro, n).into_owned();
            if b.rows.nrows() > 0 {
                ob += b.rows.tr_mul(&y.rows(ro + n, b.rows.nrows()));
            }
            out.rows_mut(xo, n).copy_from(&ob);
        }
        if self.link.nrows() > 0 {
            out += self.link.tr_mul(&y.rows(lay.m_local, self.link.nrows()));
        }
        out
    }

    fn mul_p(&self, lay: &Layout, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(lay.n);
        for (i, b) in self.blocks.iter().enumerate() {
            let (xo, n) = (lay.x_off[i], b.n());
            let px = &b.p * x.rows(xo, n);
            out.rows_mut(xo, n).copy_from(&px);
        }
        out
    }

    fn scale(&self) -> T {
        T::one() + inf_norm(&self.q)
    }
}

fn clamp<T: Scalar>(v: &DVector<T>, l: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(u[i]))
}

fn penalty_vector<T: Scalar>(l: &DVector<T>, u: &DVector<T>, rho: T) -> DVector<T> {
    let inf = T::infinity();
    DVector::from_fn(l.len(), |i, _| {
        if l[i] == u[i] {
            rho * T::lit(1e3)
        } else if l[i] == -inf && u[i] == inf {
            T::lit(1e-6)
        } else {
            rho
        }
    })
}

fn admm_factor<T: Scalar>(
    qp: &BlockQp<T>,
    lay: &Layout,
    rho: &DVector<T>,
    sigma: T,
) -> Result<ArrowFactor<T>, NotPositiveDefinite> {
    let mut blocks = Vec::with_capacity(qp.blocks.len());
    for (i, b) in qp.blocks.iter().enumerate() {
        let (ro, n, mg) = (lay.row_off[i], b.n(), b.rows.nrows());
        let mut a = b.p.clone();
        for j in 0..n {
            a[(j, j)] += sigma + rho[ro + j];
        }
        if mg > 0 {
            let rg = rho.rows(ro + n, mg);
            let mut scaled = b.rows.clone();
            for r in 0..mg {
                scaled.row_mut(r).scale_mut(rg[r]);
            }
            a += b.rows.tr_mul(&scaled);
        }
        blocks.push(BlockFactor::new(a, DMatrix::zeros(0, n), &DVector::zeros(0))?);
    }
    let ml = qp.link.nrows();
    let reg = DVector::from_fn(ml, |i, _| T::one() / rho[lay.m_local + i]);
    ArrowFactor::new(blocks, qp.link.clone(), &reg)
}

#[derive(Debug, Clone, Copy)]
struct Tolerance<T> {
    prim: T,
    dual: T,
}

/// Solves `qp` to absolute residual `tol` in its own units. The objective is
/// rescaled internally so its largest coefficient is of order one; warm-start
/// multipliers are given and returned in the caller's units.
pub(crate) fn solve_block_qp<T: Scalar>(
    qp: &BlockQp<T>,
    tol: T,
    max_iter: usize,
    settings: &QpSettings<T>,
    warm: Option<(&DVector<T>, &DVector<T>)>,
) -> RawSolution<T> {
    let cs = cost_scale(qp);
    let tol = Tolerance {
        prim: tol,
        dual: tol * cs,
    };
    if cs == T::one() {
        return iterate(qp, tol, max_iter, settings, warm);
    }
    let mut scaled = qp.clone();
    scaled.q *= cs;
    for b in &mut scaled.blocks {
        b.p *= cs;
    }
    let wy = warm.map(|(_, y)| y * cs);
    let warm = warm.zip(wy.as_ref()).map(|((x, _), y)| (x, y));
    let mut sol = iterate(&scaled, tol, max_iter, settings, warm);
    let inv = T::one() / cs;
    sol.y *= inv;
    sol.dual_residual *= inv;
    sol
}

/// Power-of-two factor bringing the largest cost coefficient into `[1, 2)`,
/// limited to `[1e-4, 1e4]`.
fn cost_scale<T: Scalar>(qp: &BlockQp<T>) -> T {
    let mut big = inf_norm(&qp.q);
    for b in &qp.blocks {
        big = big.max(b.p.iter().fold(T::zero(), |a, v| a.max(v.abs())));
    }
    if big <= T::zero() || !big.is_finite_value() {
        return T::one();
    }
    let e = (-big.to_f64_lossy().log2().floor()).clamp(-13.0, 13.0);
    T::lit(e.exp2())
}

fn iterate<T: Scalar>(
    qp: &BlockQp<T>,
    tol: Tolerance<T>,
    max_iter: usize,
    settings: &QpSettings<T>,
    warm: Option<(&DVector<T>, &DVector<T>)>,
) -> RawSolution<T> {
    let lay = qp.layout();
    let (l, u) = qp.bounds(&lay);
    let rho = penalty_vector(&l, &u, settings.rho);
    let sigma = settings.sigma;
    let alpha = settings.alpha;

    let (mut x, mut y) = match warm {
        Some((wx, wy)) if wx.len() == lay.n && wy.len() == lay.m => (wx.clone(), wy.clone()),
        _ => (DVector::zeros(lay.n), DVector::zeros(lay.m)),
    };
    let mut z = clamp(&qp.mul_c(&lay, &x), &l, &u);

    let factor = match admm_factor(qp, &lay, &rho, sigma) {
        Ok(f) => f,
        Err(_) => {
            return RawSolution {
                primal_residual: T::infinity(),
                dual_residual: T::infinity(),
                x,
                y,
                iterations: 0,
                status: QpStatus::MaxIter,
                polished: false,
            }
        }
    };

    let scale = qp.scale();
    let gate = settings.polish_gate * scale;
    let mut last_polish: Option<T> = None;
    let no_y = DVector::zeros(0);
    let no_l = DVector::zeros(qp.link.nrows());
    let mut prim = T::infinity();
    let mut dual = T::infinity();

    for k in 1..=max_iter {
        let rz = DVector::from_fn(lay.m, |i, _| rho[i] * z[i] - y[i]);
        let rhs = &x * sigma - &qp.q + qp.mul_ct(&lay, &rz);
        let (xt, _, _) = factor.solve(&rhs, &no_y, &no_l);
        let zt = qp.mul_c(&lay, &xt);
        x = &xt * alpha + &x * (T::one() - alpha);
        let zh = &zt * alpha + &z * (T::one() - alpha);
        let shifted = DVector::from_fn(lay.m, |i, _| zh[i] + y[i] / rho[i]);
        let z_new = clamp(&shifted, &l, &u);
        let y_new = DVector::from_fn(lay.m, |i, _| y[i] + rho[i] * (zh[i] - z_new[i]));
        let dy = &y_new - &y;
        z = z_new;
        y = y_new;

        if k % settings.check_every != 0 && k != max_iter {
            continue;
        }
        let cx = qp.mul_c(&lay, &x);
        prim = inf_norm(&(&cx - &z));
        let grad = qp.mul_p(&lay, &x) + &qp.q + qp.mul_ct(&lay, &y);
        dual = inf_norm(&grad);
        if !(prim.is_finite_value() && dual.is_finite_value()) {
            break;
        }

        if settings.polish {
            let worst = prim.max(dual);
            let due = match last_polish {
                None => worst <= gate,
                Some(prev) => worst <= prev * T::lit(0.5),
            };
            if due || (k == max_iter && worst < T::infinity()) {
                last_polish = Some(worst);
                if let Some(mut sol) = polish(qp, &lay, &l, &u, &y, &z, tol) {
                    sol.iterations = k;
                    return sol;
                }
            }
        }
        if prim <= tol.prim && dual <= tol.dual {
            return RawSolution {
                x,
                y,
                primal_residual: prim,
                dual_residual: dual,
                iterations: k,
                status: QpStatus::Optimal,
                polished: false,
            };
        }
        if primal_infeasible(qp, &lay, &l, &u, &dy, settings.infeasibility_tol) {
            return RawSolution {
                x,
                y,
                primal_residual: prim,
                dual_residual: dual,
                iterations: k,
                status: QpStatus::Infeasible,
                polished: false,
            };
        }
    }

    RawSolution {
        x,
        y,
        primal_residual: prim,
        dual_residual: dual,
        iterations: max_iter,
        status: QpStatus::MaxIter,
        polished: false,
    }
}

fn primal_infeasible<T: Scalar>(
    qp: &BlockQp<T>,
    lay: &Layout,
    l: &DVector<T>,
    u: &DVector<T>,
    dy: &DVector<T>,
    eps: T,
) -> bool {
    let norm = inf_norm(dy);
    if norm <= T::lit(1e-12) {
        return false;
    }
    let d = dy / norm;
    if inf_norm(&qp.mul_ct(lay, &d)) > eps {
        return false;
    }
    let inf = T::infinity();
    let mut support = T::zero();
    for i in 0..d.len() {
        if d[i] > T::zero() {
            if u[i] == inf {
                return false;
            }
            support += u[i] * d[i];
        } else if d[i] < T::zero() {
            if l[i] == -inf {
                return false;
            }
            support += l[i] * d[i];
        }
    }
    support < -eps
}

#[allow(clippy::too_many_arguments)]
fn polish<T: Scalar>(
    qp: &BlockQp<T>,
    lay: &Layout,
    l: &DVector<T>,
    u: &DVector<T>,
    y0: &DVector<T>,
    z0: &DVector<T>,
    tol: Tolerance<T>,
) -> Option<RawSolution<T>> {
    let mut activity: Vec<Activity> = (0..lay.m)
        .map(|i| {
            if l[i] == u[i] {
                Activity::Equality
            } else if z0[i] - l[i] < -y0[i] {
                Activity::Lower
            } else if u[i] - z0[i] < y0[i] {
                Activity::Upper
            } else {
                Activity::Inactive
            }
        })
        .collect();
    // Guessed active sets are often off by a few rows on degenerate LPs; a
    // handful of primal-dual active-set corrections usually fixes them.
    for _ in 0..POLISH_PASSES {
        let (x, y) = reduced_kkt(qp, lay, l, u, &activity)?;
        let cx = qp.mul_c(lay, &x);
        let z = clamp(&cx, l, u);
        let prim = inf_norm(&(&cx - &z));
        let dual = inf_norm(&(qp.mul_p(lay, &x) + &qp.q + qp.mul_ct(lay, &y)));
        let mut changed = false;
        for i in 0..lay.m {
            let next = match activity[i] {
                Activity::Lower if y[i] > tol.dual => Activity::Inactive,
                Activity::Upper if y[i] < -tol.dual => Activity::Inactive,
                Activity::Inactive if cx[i] < l[i] - tol.prim => Activity::Lower,
                Activity::Inactive if cx[i] > u[i] + tol.prim => Activity::Upper,
                a => a,
            };
            changed |= next != activity[i];
            activity[i] = next;
        }
        if !changed && prim <= tol.prim && dual <= tol.dual {
            return Some(RawSolution {
                x,
                y,
                primal_residual: prim,
                dual_residual: dual,
                iterations: 0,
                status: QpStatus::Optimal,
                polished: true,
            });
        }
        if !changed {
            return None;
        }
    }
    None
}

const POLISH_PASSES: usize = 8;

/// Solves the equality-constrained QP with the rows in `activity` pinned to
/// their bounds, refining the regularized factorization iteratively.
fn reduced_kkt<T: Scalar>(
    qp: &BlockQp<T>,
    lay: &Layout,
    l: &DVector<T>,
    u: &DVector<T>,
    activity: &[Activity],
) -> Option<(DVector<T>, DVector<T>)> {
    let target = |i: usize| match activity[i] {
        Activity::Lower | Activity::Equality => l[i],
        Activity::Upper => u[i],
        Activity::Inactive => T::zero(),
    };

    let delta = T::lit(1e-6);
    // Active rows per block, as (global row index, dense row restricted to the block).
    let mut block_rows: Vec<Vec<usize>> = Vec::with_capacity(qp.blocks.len());
    let mut bmats: Vec<DMatrix<T>> = Vec::with_capacity(qp.blocks.len());
    let mut factors = Vec::with_capacity(qp.blocks.len());
    for (bi, b) in qp.blocks.iter().enumerate() {
        let (ro, n) = (lay.row_off[bi], b.n());
        let rows: Vec<usize> = (ro..ro + b.m()).filter(|&i| activity[i] != Activity::Inactive).collect();
        let mut bm = DMatrix::zeros(rows.len(), n);
        for (r, &gi) in rows.iter().enumerate() {
            let local = gi - ro;
            if local < n {
                bm[(r, local)] = T::one();
            } else {
                bm.row_mut(r).copy_from(&b.rows.row(local - n));
            }
        }
        let mut a = b.p.clone();
        for j in 0..n {
            a[(j, j)] += delta;
        }
        let d = DVector::from_element(rows.len(), delta);
        factors.push(BlockFactor::new(a, bm.clone(), &d).ok()?);
        block_rows.push(rows);
        bmats.push(bm);
    }
    let link_rows: Vec<usize> = (lay.m_local..lay.m).filter(|&i| activity[i] != Activity::Inactive).collect();
    let mut lmat = DMatrix::zeros(link_rows.len(), lay.n);
    for (r, &gi) in link_rows.iter().enumerate() {
        lmat.row_mut(r).copy_from(&qp.link.row(gi - lay.m_local));
    }
    let factor = ArrowFactor::new(factors, lmat.clone(), &DVector::from_element(link_rows.len(), delta)).ok()?;

    let rx = -&qp.q;
    let ry_parts: Vec<T> = block_rows.iter().flatten().map(|&i| target(i)).collect();
    let ry = DVector::from_vec(ry_parts);
    let rl = DVector::from_iterator(link_rows.len(), link_rows.iter().map(|&i| target(i)));

    // Unregularized KKT operator applied to (x, yb, nu).
    let apply = |x: &DVector<T>, yb: &DVector<T>, nu: &DVector<T>| {
        let mut ox = qp.mul_p(lay, x);
        let mut oy = DVector::zeros(yb.len());
        let mut yo = 0;
        for (bi, bm) in bmats.iter().enumerate() {
            let (xo, n, k) = (lay.x_off[bi], bm.ncols(), bm.nrows());
            if k == 0 {
                continue;
            }
            let contrib = bm.tr_mul(&yb.rows(yo, k));
            let mut seg = ox.rows_mut(xo, n);
            seg += contrib;
            oy.rows_mut(yo, k).copy_from(&(bm * x.rows(xo, n)));
            yo += k;
        }
        if lmat.nrows() > 0 {
            ox += lmat.tr_mul(nu);
        }
        let ol = &lmat * x;
        (ox, oy, ol)
    };

    let (mut x, mut yb, mut nu) = factor.solve(&rx, &ry, &rl);
    let mut best = T::infinity();
    for _ in 0..25 {
        let (ax, ay, al) = apply(&x, &yb, &nu);
        let (ex, ey, el) = (&rx - ax, &ry - ay, &rl - al);
        let res = inf_norm(&ex).max(inf_norm(&ey)).max(inf_norm(&el));
        if !res.is_finite_value() {
            return None;
        }
        if res <= T::lit(1e-15) * qp.scale() || res >= best * T::lit(0.9) {
            break;
        }
        best = res;
        let (cx, cy, cl) = factor.solve(&ex, &ey, &el);
        x += cx;
        yb += cy;
        nu += cl;
    }

    let mut y = DVector::zeros(lay.m);
    for (k, &gi) in block_rows.iter().flatten().enumerate() {
        y[gi] = yb[k];
    }
    for (k, &gi) in link_rows.iter().enumerate() {
        y[gi] = nu[k];
    }
    Some((x, y))
}
