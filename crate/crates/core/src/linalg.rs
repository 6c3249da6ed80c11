//! Dense symmetric-positive-definite factorization used by the regularized
//! solves. Hand-rolled so a failed factorization can report which pivot
//! broke down, mirroring what LAPACK's POSV would return.

use crate::error::{Error, Result};

/// In-place lower Cholesky factorization of a symmetric matrix stored
/// column-major in `a` (n x n). Only the lower triangle is referenced and
/// overwritten with L. Fails with the 0-based pivot index that lost
/// positivity.
pub(crate) fn cholesky_factor(a: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        // Left-looking update of column j by all previous columns.
        for p in 0..j {
            let ljp = a[p * n + j];
            if ljp != 0.0 {
                for i in j..n {
                    a[j * n + i] -= a[p * n + i] * ljp;
                }
            }
        }
        let pivot = a[j * n + j];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let inv = 1.0 / pivot.sqrt();
        for i in j..n {
            a[j * n + i] *= inv;
        }
    }
    Ok(())
}

/// Solve L L^T X = B for `nrhs` right-hand sides stored column-major in `b`,
/// with L the factor produced by [`cholesky_factor`]. Overwrites `b` with X.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64], nrhs: usize) {
    debug_assert_eq!(l.len(), n * n);
    debug_assert_eq!(b.len(), n * nrhs);
    for col in 0..nrhs {
        let x = &mut b[col * n..(col + 1) * n];
        // Forward: L y = b.
        for j in 0..n {
            x[j] /= l[j * n + j];
            let xj = x[j];
            for i in j + 1..n {
                x[i] -= l[j * n + i] * xj;
            }
        }
        // Backward: L^T x = y.
        for j in (0..n).rev() {
            let mut acc = x[j];
            for i in j + 1..n {
                acc -= l[j * n + i] * x[i];
            }
            x[j] = acc / l[j * n + j];
        }
    }
}
