//! Parametric model order reduction.
//!
//! The full-order model is expensive to step because its state lives on the
//! whole grid. This module compresses it two ways, both built on Petrov-
//! Galerkin projection x ~ V z with a bi-orthogonal test basis W (WᵀV = I):
//!
//! * [`taylor`]: expand the parameter-dependent operators B(α), C_vol(α) in
//!   a polynomial about a reference parameter, reduce the coefficient-
//!   augmented system once with [`irka`], and evaluate the polynomial in the
//!   reduced space online.
//! * [`deim`] + [`global_basis`]: sample snapshots of B(α) and the stacked
//!   output over the parameter domain, compress them with an SVD, and
//!   interpolate new parameter values through a few greedily selected rows,
//!   with projection bases stacked from per-snapshot IRKA runs.
//!
//! [`rom`] packages either variant into a serializable [`rom::ParametricRom`]
//! whose online evaluation cost is independent of the full order, and
//! [`scan`] measures reduced-versus-full output errors over the parameter
//! domain.

pub mod deim;
pub mod irka;
pub mod rom;
pub mod scan;
pub mod taylor;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::AbsorptionScale;

pub use deim::{deim_select, DeimOperator};
pub use irka::{global_basis, irka, GlobalBasisOutcome, IrkaOptions, IrkaOutcome};
pub use rom::{
    build_gb_deim_rom, cumulative_energy, DeimOps, GbDeimOptions, ParametricRom, RomBuild,
    RomMeta, RomOps, RomVariant,
};
pub use scan::{
    error_scan, error_scan_against, mor_sweep, write_error_tables_csv,
    write_singular_values_csv, ErrorCell, ErrorMetric, ErrorTable, FullScan, ScanConfig,
    SweepConfig, SweepResult,
};
pub use taylor::{build_taylor_rom, TaylorOps, TaylorOptions};

/// A Petrov-Galerkin projection basis pair: trial basis `V`, test basis `W`,
/// both n x d with full column rank, normalized so that `WᵀV = I`.
#[derive(Clone, Debug)]
pub struct ProjectionPair {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl ProjectionPair {
    /// Reduced order d (number of basis columns).
    pub fn d(&self) -> usize {
        self.v.ncols()
    }

    /// Frobenius defect `|WᵀV - I|_F` of the bi-orthonormalization.
    pub fn biorth_defect(&self) -> f64 {
        let d = self.d();
        (self.w.transpose() * &self.v - DMatrix::<f64>::identity(d, d)).norm()
    }

    /// Enforce the invariants: matching shapes, full rank, defect <= 1e-10.
    pub fn validate(&self) -> Result<()> {
        if self.v.nrows() != self.w.nrows() || self.v.ncols() != self.w.ncols() {
            return Err(Error::Dimension(format!(
                "projection pair shapes differ: V {}x{}, W {}x{}",
                self.v.nrows(),
                self.v.ncols(),
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        let defect = self.biorth_defect();
        if !(defect <= 1e-10) {
            return Err(Error::Numerical(format!(
                "projection pair is not bi-orthonormal: |WᵀV - I|_F = {defect:.3e}"
            )));
        }
        Ok(())
    }
}

/// Orthonormalize the columns of `m` through a thin SVD, keeping the `keep`
/// leading left singular vectors (all numerically nonzero ones when `keep`
/// is `None`). Returns the basis and the singular values of `m`.
pub(crate) fn orthonormal_basis(
    m: &DMatrix<f64>,
    keep: Option<usize>,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let tol = sv.first().copied().unwrap_or(0.0) * 1e-12;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let keep = keep.unwrap_or(rank);
    if keep == 0 || rank < keep {
        return Err(Error::Numerical(format!(
            "basis is rank deficient: rank {rank} of requested {keep}"
        )));
    }
    Ok((u.columns(0, keep).into_owned(), sv))
}

/// Rescale `w` so that `wᵀ v = I` (in place of `w`). Fails when the cross
/// Gramian is numerically singular, which marks the projection unusable.
pub(crate) fn biorthonormalize(v: &DMatrix<f64>, w: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = w.transpose() * v;
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-13) {
        return Err(Error::Numerical(format!(
            "bi-orthonormalization failed: cross Gramian condition {:.3e}",
            smax / smin.max(f64::MIN_POSITIVE)
        )));
    }
    let minv_t = m
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("cross Gramian is singular".into()))?;
    Ok(w * minv_t)
}

/// Uniform snapshot grids over the admissible parameter box.
///
/// `two_param_grid(domain, nr, nc)` covers the box with an `nr x nc` grid;
/// `one_param_line(domain, k, ch)` varies only the RPE scale at a fixed
/// choroid scale.
pub fn two_param_grid(
    domain: &crate::model::AlphaDomain,
    nr: usize,
    nc: usize,
) -> Vec<AbsorptionScale> {
    domain.grid(nr, nc)
}

pub fn one_param_line(
    domain: &crate::model::AlphaDomain,
    k: usize,
    ch: f64,
) -> Vec<AbsorptionScale> {
    domain.line_rpe(k, ch)
}
