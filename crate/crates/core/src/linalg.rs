//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::Scalar;

pub fn inf_norm<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

pub fn mat_inf_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut eig: Vec<T> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    eig
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty matrix).
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::infinity)
}

pub fn max_abs_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

pub fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Concatenates per-agent vectors in agent order.
pub fn stack<T: Scalar>(parts: &[DVector<T>]) -> DVector<T> {
    let len = parts.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for part in parts {
        out.rows_mut(offset, part.len()).copy_from(part);
        offset += part.len();
    }
    out
}

/// Applies `(W ⊗ I_p)` to a stacked vector of `N` blocks of length `p`.
///
/// Sums run over neighbours in ascending index so results do not depend on
/// how the caller schedules work.
pub fn mix_stacked<T: Scalar>(w: &DMatrix<T>, v: &DVector<T>, p: usize) -> DVector<T> {
    let n = w.nrows();
    debug_assert_eq!(v.len(), n * p);
    let mut out = DVector::zeros(n * p);
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            if wij == T::zero() {
                continue;
            }
            for r in 0..p {
                out[i * p + r] += wij * v[j * p + r];
            }
        }
    }
    out
}

/// Average of `N` stacked blocks of length `p`, accumulated in ascending block order.
pub fn block_mean<T: Scalar>(v: &DVector<T>, p: usize) -> DVector<T> {
    let n = v.len().checked_div(p).unwrap_or(0);
    let mut out = DVector::zeros(p);
    for i in 0..n {
        for r in 0..p {
            out[r] += v[i * p + r];
        }
    }
    if n > 0 {
        out /= T::lit(n as f64);
    }
    out
}

/// Repeats `v` `n` times (the `𝟙 ⊗ v` lift).
pub fn repeat<T: Scalar>(v: &DVector<T>, n: usize) -> DVector<T> {
    let p = v.len();
    DVector::from_fn(n * p, |k, _| v[k % p])
}

/// Quadratic form `a' (M ⊗ I_p) b` for stacked vectors, without forming the lift.
pub fn lifted_bilinear<T: Scalar>(m: &DMatrix<T>, a: &DVector<T>, b: &DVector<T>, p: usize) -> T {
    let mb = mix_stacked(m, b, p);
    a.dot(&mb)
}

/// Kronecker product `M ⊗ I_p`.
pub fn kron_identity<T: Scalar>(m: &DMatrix<T>, p: usize) -> DMatrix<T> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * p, c * p);
    for i in 0..r {
        for j in 0..c {
            let v = m[(i, j)];
            if v != T::zero() {
                for k in 0..p {
                    out[(i * p + k, j * p + k)] = v;
                }
            }
        }
    }
    out
}
