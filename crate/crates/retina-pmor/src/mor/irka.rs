//! Tangential IRKA: interpolatory projection bases for stable LTI systems.
//!
//! The fixed point iterated here places interpolation shifts at the mirror
//! images of the reduced spectrum and tangential directions at the reduced
//! residues; at convergence the reduced model satisfies the first-order
//! H2-optimality (Hermite interpolation) conditions. All large solves are
//! shifted banded factorizations, one per shift per iteration, so the cost
//! scales with the bandwidth and not with n^2.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{complex_eigen_pairs, Banded};
use crate::model::{AbsorptionScale, Deriv, FullOrderModel};

use super::{biorthonormalize, orthonormal_basis, ProjectionPair};

/// Knobs of the IRKA fixed-point iteration.
#[derive(Clone, Copy, Debug)]
pub struct IrkaOptions {
    /// Iteration cap; hitting it returns the last iterate flagged
    /// `converged = false`.
    pub max_iters: usize,
    /// Relative change of the sorted shift vector below which the iteration
    /// is considered converged.
    pub shift_tol: f64,
    /// Initial shifts are logarithmically spaced in this (positive) range.
    pub shift_range: (f64, f64),
}

impl Default for IrkaOptions {
    fn default() -> Self {
        IrkaOptions {
            max_iters: 50,
            shift_tol: 1e-4,
            shift_range: (1e-1, 1e4),
        }
    }
}

/// Converged projection pair plus the reduced triple it induces.
#[derive(Clone, Debug)]
pub struct IrkaOutcome {
    pub pair: ProjectionPair,
    pub a_r: DMatrix<f64>,
    pub b_r: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Relative shift change at the last iteration.
    pub shift_change: f64,
}

struct ShiftData {
    sigma: Complex64,
    /// Right tangential direction (length m).
    b_dir: DVector<Complex64>,
    /// Left tangential direction (length l).
    c_dir: DVector<Complex64>,
}

/// Tangential IRKA for `(A, B, C)` with `A` banded and stable, `B` n x m,
/// `C` l x n: returns bases of order `d` with `WᵀV = I` and the projected
/// triple. Shift solves hitting a singular matrix are retried once with a
/// perturbed shift; persistent singularity and rank collapse are errors.
pub fn irka(
    a: &Banded<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: usize,
    opts: &IrkaOptions,
) -> Result<IrkaOutcome> {
    let n = a.dim();
    if b.nrows() != n || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "irka: A is {n}x{n}, B is {}x{}, C is {}x{}",
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    if d < 1 || d > n {
        return Err(Error::InvalidConfig(format!(
            "irka: reduced order d = {d} must satisfy 1 <= d <= n = {n}"
        )));
    }
    let m = b.ncols();
    let l = c.nrows();

    // Full order: the identity projection is exact and there is nothing to
    // iterate.
    if d == n {
        let eye = DMatrix::identity(n, n);
        return Ok(IrkaOutcome {
            pair: ProjectionPair { v: eye.clone(), w: eye },
            a_r: a.to_dense(),
            b_r: b.clone(),
            c_r: c.clone(),
            converged: true,
            iterations: 0,
            shift_change: 0.0,
        });
    }

    // Initial tangential directions: the leading right singular vector of B
    // (input combinations that matter most) and of Cᵀ.
    let b0 = leading_right_singular(b);
    let c0 = leading_right_singular(&c.transpose());
    let (lo, hi) = opts.shift_range;
    let mut shifts: Vec<ShiftData> = (0..d)
        .map(|k| {
            let t = if d == 1 { 0.5 } else { k as f64 / (d - 1) as f64 };
            ShiftData {
                sigma: Complex64::new(lo * (hi / lo).powf(t), 0.0),
                b_dir: b0.map(|x| Complex64::new(x, 0.0)),
                c_dir: c0.map(|x| Complex64::new(x, 0.0)),
            }
        })
        .collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut shift_change = f64::INFINITY;
    let mut projected: Option<(ProjectionPair, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = None;

    while iterations < opts.max_iters {
        iterations += 1;

        let (v_raw, w_raw) = krylov_bases(a, b, c, &shifts, d)?;
        let (v_on, _) = orthonormal_basis(&v_raw, Some(d))?;
        let (w_on, _) = orthonormal_basis(&w_raw, Some(d))?;
        let w = biorthonormalize(&v_on, w_on)?;
        let v = v_on;

        // Reduced triple.
        let av = apply_banded(a, &v);
        let a_r = w.transpose() * &av;
        let b_r = w.transpose() * b;
        let c_r = c * &v;

        // Shift/direction update from the reduced spectrum and residues.
        let eig = complex_eigen_pairs(&a_r);
        let x = &eig.vectors;
        let x_lu = x.clone().lu();
        let b_rc = b_r.map(|v| Complex64::new(v, 0.0));
        let bt = x_lu
            .solve(&b_rc)
            .ok_or_else(|| Error::Numerical("irka: reduced eigenbasis is singular".into()))?;
        let c_rc = c_r.map(|v| Complex64::new(v, 0.0));
        let ct = c_rc * x;

        let mut new_shifts = Vec::with_capacity(d);
        for (i, lambda) in eig.values.iter().enumerate() {
            // Mirror the reduced eigenvalue; force a positive real part so
            // the shift stays off the stable axis even if an intermediate
            // reduced model is unstable.
            let re = (-lambda.re).abs().max(1e-12 * (1.0 + lambda.norm()));
            new_shifts.push(ShiftData {
                sigma: Complex64::new(re, -lambda.im),
                b_dir: bt.row(i).transpose(),
                c_dir: ct.column(i).into_owned(),
            });
        }
        new_shifts.sort_by(|p, q| {
            (p.sigma.re, p.sigma.im)
                .partial_cmp(&(q.sigma.re, q.sigma.im))
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        shift_change = relative_shift_change(&shifts, &new_shifts);
        shifts = new_shifts;
        projected = Some((ProjectionPair { v, w }, a_r, b_r, c_r));

        if shift_change <= opts.shift_tol {
            converged = true;
            break;
        }
    }

    let (pair, a_r, b_r, c_r) = projected.expect("at least one iteration ran");
    pair.validate()?;
    debug_assert_eq!(b_r.nrows(), d);
    debug_assert_eq!(b_r.ncols(), m);
    debug_assert_eq!(c_r.nrows(), l);
    Ok(IrkaOutcome {
        pair,
        a_r,
        b_r,
        c_r,
        converged,
        iterations,
        shift_change,
    })
}

/// Build the raw (unorthonormalized) interpolation bases for the current
/// shifts: V spans (sigma_i I - A)^{-1} B b_i, W spans the transposed
/// counterparts. Complex shifts contribute their real and imaginary parts
/// and their conjugates are implied, so each conjugate pair is solved once.
fn krylov_bases(
    a: &Banded<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    shifts: &[ShiftData],
    d: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.dim();
    let mut v_cols: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut w_cols: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut i = 0usize;
    while i < shifts.len() && v_cols.len() < d {
        let s = &shifts[i];
        // Conjugate partner of an already-processed complex shift: skip (its
        // columns were generated from the partner's real and imaginary
        // parts).
        if s.sigma.im < 0.0 {
            i += 1;
            continue;
        }

        let rhs_v = complex_matvec(b, &s.b_dir);
        let rhs_w = complex_matvec(&c.transpose(), &s.c_dir);
        let (xv, xw) = solve_shifted(a, s.sigma, &rhs_v, &rhs_w)?;

        let complex_pair = s.sigma.im > 0.0;
        push_parts(&mut v_cols, &xv, complex_pair, d);
        push_parts(&mut w_cols, &xw, complex_pair, d);
        i += 1;
    }
    if v_cols.len() < d {
        // Fewer effective directions than d (e.g. all shifts conjugate-
        // collapsed); widen with the remaining conjugates' imaginary parts.
        return Err(Error::Numerical(format!(
            "irka: only {} of {d} basis directions could be generated",
            v_cols.len()
        )));
    }
    let v = DMatrix::from_columns(&v_cols);
    let w = DMatrix::from_columns(&w_cols);
    debug_assert_eq!(v.nrows(), n);
    Ok((v, w))
}

/// Solve (sigma I - A) x = rhs_v and (sigma I - A)ᵀ y = rhs_w with one
/// factorization; on a singular factorization, retry once with a slightly
/// perturbed shift.
fn solve_shifted(
    a: &Banded<f64>,
    sigma: Complex64,
    rhs_v: &DVector<Complex64>,
    rhs_w: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, DVector<Complex64>)> {
    let mut shift = sigma;
    for attempt in 0..2 {
        match a.complex_shift_minus(shift).lu() {
            Ok(lu) => {
                let xv = DVector::from_vec(lu.solve(rhs_v.as_slice()));
                let xw = DVector::from_vec(lu.solve_transpose(rhs_w.as_slice()));
                return Ok((xv, xw));
            }
            Err(_) if attempt == 0 => {
                // The shift collided with an eigenvalue: nudge it.
                let eps = 1e-8 * (1.0 + shift.norm());
                shift += Complex64::new(eps, eps);
            }
            Err(e) => {
                return Err(Error::Numerical(format!(
                    "irka: shifted solve at sigma = {shift} is singular after retry: {e}"
                )))
            }
        }
    }
    unreachable!("loop returns on the second attempt");
}

fn push_parts(cols: &mut Vec<DVector<f64>>, x: &DVector<Complex64>, complex_pair: bool, d: usize) {
    if cols.len() < d {
        cols.push(x.map(|v| v.re));
    }
    if complex_pair && cols.len() < d {
        cols.push(x.map(|v| v.im));
    }
}

fn complex_matvec(m: &DMatrix<f64>, dir: &DVector<Complex64>) -> DVector<Complex64> {
    let mc = m.map(|v| Complex64::new(v, 0.0));
    mc * dir
}

fn apply_banded(a: &Banded<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for j in 0..v.ncols() {
        let col = a.mul_vec(v.column(j).as_slice());
        out.set_column(j, &DVector::from_vec(col));
    }
    out
}

fn leading_right_singular(m: &DMatrix<f64>) -> DVector<f64> {
    let cols = m.ncols();
    if cols == 1 {
        return DVector::from_element(1, 1.0);
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    vt.row(0).transpose()
}

fn relative_shift_change(old: &[ShiftData], new: &[ShiftData]) -> f64 {
    // Both lists are sorted by (re, im) except for the very first iteration,
    // where `old` is the sorted log-spaced ladder anyway.
    let mut old_sorted: Vec<Complex64> = old.iter().map(|s| s.sigma).collect();
    old_sorted.sort_by(|x, y| {
        (x.re, x.im)
            .partial_cmp(&(y.re, y.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let num: f64 = old_sorted
        .iter()
        .zip(new.iter())
        .map(|(o, s)| (o - s.sigma).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den: f64 = old_sorted
        .iter()
        .map(|o| o.norm_sqr())
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    num / den
}

/// Outcome of stacking per-snapshot IRKA bases into one global pair.
#[derive(Clone, Debug)]
pub struct GlobalBasisOutcome {
    pub pair: ProjectionPair,
    /// Singular values of the stacked trial (V) and test (W) collections.
    pub v_singular_values: Vec<f64>,
    pub w_singular_values: Vec<f64>,
    /// Snapshot parameters whose local reduction failed, with the reason.
    pub skipped: Vec<(AbsorptionScale, String)>,
}

/// Build a global projection pair valid across the parameter domain: run
/// IRKA at each snapshot parameter (input B(α), stacked outputs
/// [C_vol(α); C_peak]) to order `d_local`, stack the local bases, compress
/// each stack to its `d` leading left singular vectors, and re-establish
/// `WᵀV = I`.
///
/// Failed local reductions are skipped and reported. With a single snapshot
/// the result spans exactly the local IRKA basis; with several provided, at
/// least two must survive.
pub fn global_basis(
    model: &FullOrderModel,
    snapshot_params: &[AbsorptionScale],
    d_local: usize,
    d: usize,
    opts: &IrkaOptions,
) -> Result<GlobalBasisOutcome> {
    if snapshot_params.is_empty() {
        return Err(Error::InvalidConfig(
            "global basis: need at least one snapshot parameter".into(),
        ));
    }
    if d > d_local * snapshot_params.len() {
        return Err(Error::InvalidConfig(format!(
            "global basis: d = {d} exceeds the stacked order {} ({} snapshots x d_local {d_local})",
            d_local * snapshot_params.len(),
            snapshot_params.len()
        )));
    }

    // Local reductions are independent; run them in parallel, collecting in
    // snapshot order so results stay deterministic.
    let locals: Vec<_> = snapshot_params
        .par_iter()
        .map(|alpha| {
            irka(
                model.a_c(),
                &DMatrix::from_column_slice(
                    model.n(),
                    1,
                    model.input_vector(alpha, Deriv::None).as_slice(),
                ),
                &stacked_outputs(model, alpha),
                d_local,
                opts,
            )
        })
        .collect();
    let mut v_stack: Vec<DMatrix<f64>> = Vec::new();
    let mut w_stack: Vec<DMatrix<f64>> = Vec::new();
    let mut skipped = Vec::new();
    for (alpha, res) in snapshot_params.iter().zip(locals) {
        match res {
            Ok(out) => {
                v_stack.push(out.pair.v);
                w_stack.push(out.pair.w);
            }
            Err(e) => skipped.push((*alpha, e.to_string())),
        }
    }
    let survivors = v_stack.len();
    if survivors == 0 || (snapshot_params.len() >= 2 && survivors < 2) {
        return Err(Error::Numerical(format!(
            "global basis: only {survivors} of {} local reductions succeeded",
            snapshot_params.len()
        )));
    }

    let v_all = hstack(&v_stack);
    let w_all = hstack(&w_stack);
    let (v_on, v_sv) = orthonormal_basis(&v_all, Some(d))?;
    let (w_on, w_sv) = orthonormal_basis(&w_all, Some(d))?;
    let w = biorthonormalize(&v_on, w_on)?;
    let pair = ProjectionPair { v: v_on, w };
    pair.validate()?;
    Ok(GlobalBasisOutcome {
        pair,
        v_singular_values: v_sv,
        w_singular_values: w_sv,
        skipped,
    })
}

/// The stacked output matrix [C_vol(α); C_peak] as a dense 2 x n matrix.
pub fn stacked_outputs(model: &FullOrderModel, alpha: &AbsorptionScale) -> DMatrix<f64> {
    let n = model.n();
    let mut c = DMatrix::zeros(2, n);
    c.row_mut(0)
        .copy_from(&model.output_vol(alpha, Deriv::None).transpose());
    c.row_mut(1).copy_from(&model.output_peak().transpose());
    c
}

fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}
