//! Compact Kronecker algebra and dimension bookkeeping.
//!
//! A quadratic model term `H (q ⊗ q)` only ever sees the r(r+1)/2 unique
//! monomials `q_i q_j` with `i <= j`, so all quadratic operators in this crate
//! are stored in that compact form. The ordering is fixed once here —
//! lexicographic in (i, j): (0,0), (0,1), …, (0,r-1), (1,1), …, (r-1,r-1) —
//! and every other module relies on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of unique quadratic monomials in an `r`-dimensional state:
/// binomial(r+1, 2) = r(r+1)/2.
pub fn compact_dim(r: usize) -> Result<usize> {
    if r == 0 {
        return Err(Error::InvalidDimension(
            "reduced dimension r must be at least 1".into(),
        ));
    }
    Ok(r * (r + 1) / 2)
}

/// Column dimension of the regression data matrix:
/// `d(r, m) = 1 + r + r(r+1)/2 + m` (constant, linear, quadratic, input blocks).
pub fn data_dim(r: usize, m: usize) -> Result<usize> {
    Ok(1 + r + compact_dim(r)? + m)
}

/// The ordered index pairs backing the compact quadratic form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompactIndexMap {
    r: usize,
    pairs: Vec<(usize, usize)>,
}

impl CompactIndexMap {
    pub fn new(r: usize) -> Result<Self> {
        let len = compact_dim(r)?;
        let mut pairs = Vec::with_capacity(len);
        for i in 0..r {
            for j in i..r {
                pairs.push((i, j));
            }
        }
        debug_assert_eq!(pairs.len(), len);
        Ok(CompactIndexMap { r, pairs })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Position of the monomial `q_i q_j` (`i <= j`) in the compact vector.
    pub fn position(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.r);
        // Pairs with first index < i occupy a triangular prefix.
        i * self.r - i * (i + 1) / 2 + i + (j - i)
    }
}

/// Compact Kronecker product of a vector with itself:
/// entry for pair (i, j) is `q_i * q_j`, in [`CompactIndexMap`] order.
pub fn kron_compact(q: &DVector<f64>) -> DVector<f64> {
    let r = q.len();
    let mut out = DVector::zeros(r * (r + 1) / 2);
    kron_compact_into(q.as_slice(), out.as_mut_slice());
    out
}

/// Slice form of [`kron_compact`], used by the integrator hot loop to avoid
/// allocating once per right-hand-side evaluation.
pub(crate) fn kron_compact_into(q: &[f64], out: &mut [f64]) {
    let mut idx = 0;
    for i in 0..q.len() {
        let qi = q[i];
        for &qj in &q[i..] {
            out[idx] = qi * qj;
            idx += 1;
        }
    }
    debug_assert_eq!(idx, out.len());
}

/// Columnwise compact Kronecker product: column j of the result is
/// `kron_compact` of column j of `Q`.
pub fn kron_compact_columns(q: &DMatrix<f64>) -> DMatrix<f64> {
    let r = q.nrows();
    let d2 = r * (r + 1) / 2;
    let mut out = DMatrix::zeros(d2, q.ncols());
    for j in 0..q.ncols() {
        kron_compact_into(q.column(j).as_slice(), &mut out.column_mut(j).as_mut_slice());
    }
    out
}

/// Collapse a full quadratic operator (r × r², acting on `q ⊗ q`) to the
/// compact form acting on [`kron_compact`]`(q)`.
///
/// Off-diagonal coefficients are summed — not averaged — so the compact
/// operator reproduces the full operator's action exactly:
/// `H_compact · kron_compact(q) = H_full · (q ⊗ q)` for every `q`.
pub fn compact_from_full(h_full: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = h_full.nrows();
    let full_cols = h_full.ncols();
    if r == 0 || full_cols != r * r {
        return Err(Error::shape(
            "compact_from_full",
            format!("{r}x{}", r * r),
            format!("{r}x{full_cols}"),
        ));
    }
    let map = CompactIndexMap::new(r)?;
    let mut out = DMatrix::zeros(r, map.pairs().len());
    for (col, &(i, j)) in map.pairs().iter().enumerate() {
        // Full Kronecker ordering: (q ⊗ q)[i*r + j] = q_i q_j.
        let mut column = h_full.column(i * r + j).clone_owned();
        if i != j {
            column += h_full.column(j * r + i);
        }
        out.set_column(col, &column);
    }
    Ok(out)
}

/// Full (non-compact) Kronecker product `q ⊗ q`, length r².
pub fn kron_full(q: &DVector<f64>) -> DVector<f64> {
    let r = q.len();
    let mut out = DVector::zeros(r * r);
    for i in 0..r {
        for j in 0..r {
            out[i * r + j] = q[i] * q[j];
        }
    }
    out
}
