//! Structured factorization for block-arrow quasi-definite systems.
//!
//! The solver only ever needs systems of the shape
//!
//! ```text
//! [ K_1                 E_1' ] [w_1]   [r_1]
//! [      ...            ...  ] [...] = [...]
//! [           K_N       E_N' ] [w_N]   [r_N]
//! [ E_1  ...  E_N      -D    ] [nu ]   [r_L]
//! ```
//!
//! where each diagonal block is `K_i = [[A_i, B_i'], [B_i, -D_i]]` with `A_i`
//! positive definite and `D_i`, `D` positive diagonals. `E_i` only touches the
//! `x` part of `w_i`. Everything reduces to dense Cholesky factorizations of
//! size `n_i`, `k_i` and `m_L`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NotPositiveDefinite;

/// Factor of `[[A, B'], [B, -D]]`.
pub(crate) struct BlockFactor<T: Scalar> {
    a: Cholesky<T, Dyn>,
    b: DMatrix<T>,
    schur: Option<Cholesky<T, Dyn>>,
    nx: usize,
}

impl<T: Scalar> BlockFactor<T> {
    pub(crate) fn new(a: DMatrix<T>, b: DMatrix<T>, d: &DVector<T>) -> Result<Self, NotPositiveDefinite> {
        let nx = a.nrows();
        let a = Cholesky::new(a).ok_or(NotPositiveDefinite)?;
        let schur = if b.nrows() == 0 {
            None
        } else {
            // S = D + B A^{-1} B'
            let ainv_bt = a.solve(&b.transpose());
            let mut s = &b * ainv_bt;
            for i in 0..d.len() {
                s[(i, i)] += d[i];
            }
            Some(Cholesky::new(s).ok_or(NotPositiveDefinite)?)
        };
        Ok(Self { a, b, schur, nx })
    }

    pub(crate) fn nx(&self) -> usize {
        self.nx
    }

    pub(crate) fn ny(&self) -> usize {
        self.b.nrows()
    }

    /// Solves in place: `rx` becomes `x`, `ry` becomes `y`.
    pub(crate) fn solve_mut(&self, rx: &mut DVector<T>, ry: &mut DVector<T>) {
        match &self.schur {
            None => self.a.solve_mut(rx),
            Some(s) => {
                let mut ainv_rx = rx.clone();
                self.a.solve_mut(&mut ainv_rx);
                // S y = B A^{-1} rx - ry
                let mut y = &self.b * &ainv_rx - &*ry;
                s.solve_mut(&mut y);
                // x = A^{-1} (rx - B' y)
                *rx -= self.b.tr_mul(&y);
                self.a.solve_mut(rx);
                *ry = y;
            }
        }
    }
}

/// Factor of the full block-arrow system.
pub(crate) struct ArrowFactor<T: Scalar> {
    blocks: Vec<BlockFactor<T>>,
    x_offsets: Vec<usize>,
    y_offsets: Vec<usize>,
    nx: usize,
    ny: usize,
    link: DMatrix<T>,
    // K^{-1} [E'; 0] split into x and y parts, plus the Cholesky factor of D + E K^{-1} E'.
    coupling: Option<(DMatrix<T>, DMatrix<T>, Cholesky<T, Dyn>)>,
}

impl<T: Scalar> ArrowFactor<T> {
    pub(crate) fn new(
        blocks: Vec<BlockFactor<T>>,
        link: DMatrix<T>,
        link_reg: &DVector<T>,
    ) -> Result<Self, NotPositiveDefinite> {
        let mut x_offsets = Vec::with_capacity(blocks.len());
        let mut y_offsets = Vec::with_capacity(blocks.len());
        let (mut nx, mut ny) = (0, 0);
        for b in &blocks {
            x_offsets.push(nx);
            y_offsets.push(ny);
            nx += b.nx();
            ny += b.ny();
        }
        let mut factor = Self {
            blocks,
            x_offsets,
            y_offsets,
            nx,
            ny,
            link,
            coupling: None,
        };
        let ml = factor.link.nrows();
        if ml > 0 {
            let mut yx = DMatrix::zeros(nx, ml);
            let mut yy = DMatrix::zeros(ny, ml);
            for j in 0..ml {
                let mut rx: DVector<T> = factor.link.row(j).transpose();
                let mut ry = DVector::zeros(ny);
                factor.block_solve(&mut rx, &mut ry);
                yx.set_column(j, &rx);
                yy.set_column(j, &ry);
            }
            let mut s = &factor.link * &yx;
            for i in 0..ml {
                s[(i, i)] += link_reg[i];
            }
            let chol = Cholesky::new(s).ok_or(NotPositiveDefinite)?;
            factor.coupling = Some((yx, yy, chol));
        }
        Ok(factor)
    }

    fn block_solve(&self, rx: &mut DVector<T>, ry: &mut DVector<T>) {
        for (i, b) in self.blocks.iter().enumerate() {
            let (xo, yo) = (self.x_offsets[i], self.y_offsets[i]);
            let mut bx: DVector<T> = rx.rows(xo, b.nx()).into_owned();
            let mut by: DVector<T> = ry.rows(yo, b.ny()).into_owned();
            b.solve_mut(&mut bx, &mut by);
            rx.rows_mut(xo, b.nx()).copy_from(&bx);
            ry.rows_mut(yo, b.ny()).copy_from(&by);
        }
    }

    /// Solves the full system; returns `(x, y, nu)`.
    pub(crate) fn solve(
        &self,
        rx: &DVector<T>,
        ry: &DVector<T>,
        rl: &DVector<T>,
    ) -> (DVector<T>, DVector<T>, DVector<T>) {
        debug_assert_eq!(rx.len(), self.nx);
        debug_assert_eq!(ry.len(), self.ny);
        let mut x = rx.clone();
        let mut y = ry.clone();
        self.block_solve(&mut x, &mut y);
        match &self.coupling {
            None => (x, y, DVector::zeros(0)),
            Some((yx, yy, chol)) => {
                let mut nu = &self.link * &x - rl;
                chol.solve_mut(&mut nu);
                x -= yx * &nu;
                y -= yy * &nu;
                (x, y, nu)
            }
        }
    }
}
