//! Eigenvalue/eigenvector pairs of small dense real matrices.
//!
//! Eigenvalues come from the real Schur form (`complex_eigenvalues`); right
//! eigenvectors are recovered by shifted inverse iteration on the complex
//! matrix. Matrices here are tiny (reduced orders, d <= a few dozen), so the
//! extra complex factorization per eigenvalue is irrelevant.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigen-decomposition A X = X diag(values), with eigenvalues sorted by
/// (real part, imaginary part) and conjugate pairs adjacent.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<Complex64>,
    /// Right eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<Complex64>,
}

/// Compute eigenvalues and right eigenvectors of a small real matrix.
pub fn complex_eigen_pairs(a: &DMatrix<f64>) -> EigenPairs {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigen: matrix must be square");
    let mut values: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| {
        (x.re, x.im)
            .partial_cmp(&(y.re, y.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mut vectors = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut k = 0usize;
    while k < n {
        let lambda = values[k];
        if lambda.im < 0.0 && k > 0 && (values[k - 1].conj() - lambda).norm() < 1e-12 {
            // Conjugate partner of the previous eigenvalue.
            let prev = vectors.column(k - 1).map(|v| v.conj());
            vectors.set_column(k, &prev);
            k += 1;
            continue;
        }
        let v = inverse_iteration(&ac, lambda, k);
        vectors.set_column(k, &v);
        k += 1;
    }
    EigenPairs { values, vectors }
}

fn inverse_iteration(ac: &DMatrix<Complex64>, lambda: Complex64, seed: usize) -> DVector<Complex64> {
    let n = ac.nrows();
    let scale = 1.0 + lambda.norm();
    let mut best: Option<(f64, DVector<Complex64>)> = None;
    // A handful of shift perturbations guards against exactly singular shifts
    // and (mildly) defective clusters.
    for attempt in 0..4 {
        let eps = scale * 1e-8 * 10f64.powi(attempt);
        let shifted = ac - DMatrix::identity(n, n) * (lambda + Complex64::new(eps, eps));
        let Some(lu) = try_lu(&shifted) else { continue };
        let mut v = seed_vector(n, seed + attempt as usize);
        for _ in 0..3 {
            let mut w = lu.solve(&v).unwrap_or_else(|| v.clone());
            let norm = w.norm();
            if !norm.is_finite() || norm == 0.0 {
                break;
            }
            w /= Complex64::new(norm, 0.0);
            v = w;
        }
        let residual = (ac * &v - &v * lambda).norm();
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, v));
        }
        if best.as_ref().is_some_and(|(r, _)| *r < 1e-9 * scale) {
            break;
        }
    }
    best.map(|(_, v)| v)
        .unwrap_or_else(|| seed_vector(n, seed))
}

fn try_lu(m: &DMatrix<Complex64>) -> Option<nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = m.clone().lu();
    // Reject exactly singular factorizations.
    let d = lu.determinant();
    if d.norm().is_finite() && d.norm() > 0.0 {
        Some(lu)
    } else {
        None
    }
}

fn seed_vector(n: usize, seed: usize) -> DVector<Complex64> {
    let mut v = DVector::from_fn(n, |i, _| {
        let t = ((i + 1) * (seed + 2)) as f64;
        Complex64::new(t.sin() + 0.3, (0.7 * t).cos())
    });
    let norm = v.norm();
    v /= Complex64::new(norm, 0.0);
    v
}
