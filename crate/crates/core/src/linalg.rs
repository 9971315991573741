//! Dense complex kernels used by the solvers.
//!
//! Matrices are nalgebra column-major, so both `A^* x` (one conjugated dot
//! product per column) and `A y` (one axpy per column) walk contiguous memory.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CoreError, Result};

/// `A^* x` for an `n x m` matrix `A` and an `n`-vector `x`.
pub fn adjoint_apply(a: &DMatrix<Complex64>, x: &DVector<Complex64>) -> DVector<Complex64> {
    let n = a.nrows();
    let xs = x.as_slice();
    let data = a.as_slice();
    DVector::from_iterator(
        a.ncols(),
        data.chunks_exact(n).map(|col| {
            col.iter()
                .zip(xs)
                .fold(Complex64::new(0.0, 0.0), |acc, (aij, xi)| acc + aij.conj() * xi)
        }),
    )
}

/// `A y` for an `n x m` matrix `A` and an `m`-vector `y`.
pub fn apply(a: &DMatrix<Complex64>, y: &DVector<Complex64>) -> DVector<Complex64> {
    let n = a.nrows();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (col, yj) in a.as_slice().chunks_exact(n).zip(y.iter()) {
        if *yj == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, aij) in out.iter_mut().zip(col) {
            *o += aij * yj;
        }
    }
    DVector::from_vec(out)
}

pub fn norm(x: &DVector<Complex64>) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Least-squares / minimum-norm solver for `M z = y` where `M = A^*`.
///
/// Built once from a Householder QR and stored as an explicit `n x m`
/// pseudoinverse so each solve is a single matrix-vector product.
/// Overdetermined frames (`m >= n`) factor `A^* = QR` and use `R^{-1} Q^*`;
/// underdetermined frames factor `A = QR` and use the minimum-norm map
/// `Q R^{-*}`. Pivots below `rank_tol * max|R_ii|` are treated as zero.
#[derive(Debug, Clone)]
pub struct AdjointPinv {
    pinv: DMatrix<Complex64>,
    rank: usize,
}

impl AdjointPinv {
    pub fn new(a: &DMatrix<Complex64>) -> Result<Self> {
        let (n, m) = a.shape();
        if n == 0 || m == 0 {
            return Err(CoreError::Dimension("pseudoinverse of an empty matrix".into()));
        }
        let rank_tol = 1e-12 * (n.max(m) as f64);
        if m >= n {
            // A^* is m x n, tall.
            let qr = a.adjoint().qr();
            let (q, r) = qr.unpack();
            let keep = pivot_mask(&r, rank_tol);
            let rank = keep.iter().filter(|k| **k).count();
            let qh = q.adjoint(); // n x m
            let pinv = back_substitute_upper(&r, &qh, &keep);
            Ok(Self { pinv, rank })
        } else {
            // A is n x m, tall: A = QR, A^* = R^* Q^*, pinv(A^*) = Q R^{-*}.
            let qr = a.clone().qr();
            let (q, r) = qr.unpack();
            let keep = pivot_mask(&r, rank_tol);
            let rank = keep.iter().filter(|k| **k).count();
            // Solve R^* W = I (forward substitution), then pinv = Q W.
            let identity = DMatrix::<Complex64>::identity(m, m);
            let w = forward_substitute_lower_adjoint(&r, &identity, &keep);
            Ok(Self { pinv: q * w, rank })
        }
    }

    /// `pinv(A^*) y`.
    pub fn solve(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        apply(&self.pinv, y)
    }

    /// Numerical rank detected during factorization.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.pinv
    }
}

fn pivot_mask(r: &DMatrix<Complex64>, rel_tol: f64) -> Vec<bool> {
    let k = r.nrows().min(r.ncols());
    let max = (0..k).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    (0..k)
        .map(|i| max > 0.0 && r[(i, i)].norm() > rel_tol * max)
        .collect()
}

/// Solves `R X = B` for square upper-triangular `R`, zeroing rows whose pivot was dropped.
fn back_substitute_upper(
    r: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    keep: &[bool],
) -> DMatrix<Complex64> {
    let k = r.nrows();
    let mut x = DMatrix::<Complex64>::zeros(k, b.ncols());
    for c in 0..b.ncols() {
        for i in (0..k).rev() {
            if !keep[i] {
                continue;
            }
            let mut acc = b[(i, c)];
            for j in (i + 1)..k {
                acc -= r[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = acc / r[(i, i)];
        }
    }
    x
}

/// Solves `R^* X = B` for square upper-triangular `R` (so `R^*` is lower-triangular).
fn forward_substitute_lower_adjoint(
    r: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    keep: &[bool],
) -> DMatrix<Complex64> {
    let k = r.nrows();
    let mut x = DMatrix::<Complex64>::zeros(k, b.ncols());
    for c in 0..b.ncols() {
        for i in 0..k {
            if !keep[i] {
                continue;
            }
            let mut acc = b[(i, c)];
            for j in 0..i {
                acc -= r[(j, i)].conj() * x[(j, c)];
            }
            x[(i, c)] = acc / r[(i, i)].conj();
        }
    }
    x
}
