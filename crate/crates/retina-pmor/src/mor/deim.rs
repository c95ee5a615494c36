//! Discrete empirical interpolation: sparse sampling of parameter-dependent
//! vectors.
//!
//! Given an orthonormal basis `U` (n x k) for a family of vectors `f(alpha)`,
//! the interpolatory approximation `f ≈ U (PᵀU)^{-1} Pᵀ f` reads only `k`
//! entries of `f`. The rows picked by `P` are chosen greedily so that each
//! new row maximizes the residual of the previous interpolant, which keeps
//! `PᵀU` well conditioned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Greedy interpolation-row selection for the columns of `u`.
///
/// Row `j_1` maximizes `|u_1|`; row `j_l` maximizes the residual of column
/// `l` after interpolating it through the rows selected so far. Ties go to
/// the smallest row index. A (numerically) zero residual means the columns
/// are dependent and is an error.
pub fn deim_select(u: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, k) = (u.nrows(), u.ncols());
    if k == 0 || n < k {
        return Err(Error::Dimension(format!(
            "interpolation basis must be tall, got {n} x {k}"
        )));
    }
    let mut indices = Vec::with_capacity(k);
    indices.push(argmax_abs(&u.column(0).into_owned()));

    for l in 1..k {
        let u_prev = u.columns(0, l);
        let col = u.column(l).into_owned();
        // Coefficients of the current interpolant: (PᵀU_prev) c = Pᵀ u_l.
        let p_u = select_rows(&u_prev.into_owned(), &indices);
        let p_col = DVector::from_fn(l, |i, _| col[indices[i]]);
        let c = p_u.lu().solve(&p_col).ok_or_else(|| {
            Error::Numerical(format!(
                "interpolation system became singular at column {l}"
            ))
        })?;
        let residual = &col - u.columns(0, l) * c;
        let j = argmax_abs(&residual);
        let max = residual[j].abs();
        if max <= 1e-13 * col.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "column {l} is interpolated exactly by the previous rows; \
                 basis columns are linearly dependent"
            )));
        }
        indices.push(j);
    }
    Ok(indices)
}

/// Interpolation operator `U (PᵀU)^{-1}` with its row set.
#[derive(Clone, Debug)]
pub struct DeimOperator {
    /// Orthonormal basis, n x k.
    pub basis: DMatrix<f64>,
    /// Selected row indices, length k, pairwise distinct.
    pub indices: Vec<usize>,
    /// `(PᵀU)^{-1}`, k x k.
    pub interp: DMatrix<f64>,
    /// 2-norm condition number of `PᵀU`.
    pub cond: f64,
}

impl DeimOperator {
    /// Select rows for `basis` and invert the interpolation block.
    pub fn build(basis: DMatrix<f64>) -> Result<Self> {
        let indices = deim_select(&basis)?;
        let p_u = select_rows(&basis, &indices);
        let svd = p_u.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= smax * 1e-14 {
            return Err(Error::Numerical(
                "selected interpolation rows are numerically singular".into(),
            ));
        }
        let interp = p_u
            .try_inverse()
            .ok_or_else(|| Error::Numerical("interpolation block is singular".into()))?;
        Ok(DeimOperator {
            basis,
            indices,
            interp,
            cond: smax / smin,
        })
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Expansion coefficients from the sampled entries `Pᵀ f`.
    pub fn coefficients(&self, entries: &[f64]) -> DVector<f64> {
        debug_assert_eq!(entries.len(), self.k());
        &self.interp * DVector::from_column_slice(entries)
    }

    /// Full reconstruction `U (PᵀU)^{-1} Pᵀ f` from the sampled entries.
    pub fn approximate(&self, entries: &[f64]) -> DVector<f64> {
        &self.basis * self.coefficients(entries)
    }

    /// Sample a full vector at the selected rows (used by tests and by
    /// callers that still hold full vectors).
    pub fn sample(&self, f: &DVector<f64>) -> Vec<f64> {
        self.indices.iter().map(|&i| f[i]).collect()
    }
}

/// Gather `rows` of `m` into a dense `rows.len() x m.ncols()` matrix.
pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn argmax_abs(v: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_val = v[0].abs();
    for (i, x) in v.iter().enumerate().skip(1) {
        if x.abs() > best_val {
            best = i;
            best_val = x.abs();
        }
    }
    best
}
