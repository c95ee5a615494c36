//! Parametric sensitivity of the thermal model in the absorption scales.
//!
//! Three complementary views of how strongly the outputs react to the two
//! absorption scales:
//!
//! * closed-form L2 norms of the partial derivatives of the absorbed-power
//!   profile `g` (grid-free, pure quadrature),
//! * derivatives of the DC gains, combining the analytic operator
//!   derivatives with adjoint solves on the assembled model, and
//! * time-domain perturbation experiments comparing full simulations at a
//!   nominal and a perturbed parameter value.
//!
//! The norm of `dg/d(alpha_rpe)` exceeds the norm of `dg/d(alpha_ch)`, and
//! after scaling by the cohort spread the gap widens to roughly an order of
//! magnitude; the DC-gain rows of [`SensitivityReport`] show the same
//! ordering. This asymmetry is what justifies fixing the choroid scale when
//! identification time is scarce.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AbsorptionScale, AlphaStats, BeamParams, Deriv, FullOrderModel, GPoint, LayerStack,
};
use crate::simulate::{self, Stepper};

/// Unit system for quadrature over the absorbing depth.
///
/// `Si` integrates lengths in meters and absorption coefficients in 1/m;
/// `Micron` rescales lengths to micrometers and coefficients to 1/um before
/// integrating. An L2 depth-norm of a derivative of `g` carries the unit
/// 1/sqrt(length), so the two systems differ by an exact factor of 1e3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    Si,
    Micron,
}

/// Relative tolerance of the adaptive quadrature behind [`g_partial_norm`].
const QUAD_REL_TOL: f64 = 1e-12;

/// L2 norm over the absorbing depth interval of a mixed partial derivative
/// of the absorbed-power profile `g` with respect to the absorption scales
/// (`which = Deriv::None` gives the norm of `g` itself).
///
/// The integrand is piecewise smooth on the RPE and choroid segments, so
/// each segment is integrated separately with adaptive Simpson quadrature
/// to a relative tolerance of 1e-12.
pub fn g_partial_norm(
    layers: &LayerStack,
    alpha: &AbsorptionScale,
    which: Deriv,
    units: Units,
) -> f64 {
    let (i, j) = which.orders();
    let (len_scale, mu_scale) = match units {
        Units::Si => (1.0, 1.0),
        Units::Micron => (1e6, 1e-6),
    };
    let bp = BeamParams {
        mu_rpe: layers.mu_rpe * mu_scale,
        mu_choroid: layers.mu_choroid * mu_scale,
        d_rpe: layers.d_rpe * len_scale,
        d_choroid: layers.d_choroid * len_scale,
        input_scale: 1.0,
    };
    let rpe = |w: f64| bp.g_deriv(GPoint::Rpe(w), alpha, i, j).powi(2);
    let ch = |s: f64| bp.g_deriv(GPoint::Choroid(s), alpha, i, j).powi(2);
    let sq = adaptive_simpson(&rpe, 0.0, bp.d_rpe, QUAD_REL_TOL)
        + adaptive_simpson(&ch, 0.0, bp.d_choroid, QUAD_REL_TOL);
    sq.max(0.0).sqrt()
}

/// Norms of `dg/d(alpha_rpe)` and `dg/d(alpha_ch)` in micrometer units,
/// scaled by one standard deviation of the respective parameter: the
/// first-order output change induced by a one-sigma parameter perturbation.
pub fn scaled_g_sensitivities(
    layers: &LayerStack,
    alpha: &AbsorptionScale,
    sigma: &AbsorptionScale,
) -> (f64, f64) {
    assert!(
        sigma.rpe >= 0.0 && sigma.ch >= 0.0,
        "standard deviations must be nonnegative"
    );
    (
        g_partial_norm(layers, alpha, Deriv::Rpe, Units::Micron) * sigma.rpe,
        g_partial_norm(layers, alpha, Deriv::Ch, Units::Micron) * sigma.ch,
    )
}

/// Derivatives of the DC gains with respect to the absorption scales [K/W].
///
/// Signs follow the positive-gain convention of [`simulate::dc_gain`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcSensitivities {
    pub vol_rpe: f64,
    pub vol_ch: f64,
    pub peak_rpe: f64,
    pub peak_ch: f64,
}

impl DcSensitivities {
    /// Entry-wise absolute values, scaled per parameter: RPE entries by
    /// `s_rpe`, choroid entries by `s_ch`.
    pub fn scaled_abs(&self, s_rpe: f64, s_ch: f64) -> DcSensitivities {
        DcSensitivities {
            vol_rpe: self.vol_rpe.abs() * s_rpe,
            vol_ch: self.vol_ch.abs() * s_ch,
            peak_rpe: self.peak_rpe.abs() * s_rpe,
            peak_ch: self.peak_ch.abs() * s_ch,
        }
    }

    /// `[vol_rpe, vol_ch, peak_rpe, peak_ch]`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.vol_rpe, self.vol_ch, self.peak_rpe, self.peak_ch]
    }
}

/// Derivatives of both DC gains with respect to both absorption scales, by
/// the product rule: the gain `G_* = -C_*(alpha) A_c^{-1} B(alpha)` differs
/// in `alpha` through both operators, so
///
/// ```text
/// dG_vol = -( dC_vol . A^{-1} B  +  C_vol . A^{-1} dB )
/// dG_peak = -( C_peak . A^{-1} dB )            (C_peak is alpha-free)
/// ```
///
/// evaluated with one forward solve for `A^{-1}B` and one adjoint (transpose)
/// solve per output row, reusing the model's banded factorization.
pub fn dc_sensitivities(model: &FullOrderModel, alpha: &AbsorptionScale) -> DcSensitivities {
    let lu = model.a_c_lu();
    let b = model.input_vector(alpha, Deriv::None);
    let w = DVector::from_vec(lu.solve(b.as_slice()));
    let v_vol = DVector::from_vec(lu.solve_transpose(model.output_vol(alpha, Deriv::None).as_slice()));
    let v_peak = DVector::from_vec(lu.solve_transpose(model.output_peak().as_slice()));

    let db_rpe = model.input_vector(alpha, Deriv::Rpe);
    let db_ch = model.input_vector(alpha, Deriv::Ch);
    let dc_rpe = model.output_vol(alpha, Deriv::Rpe);
    let dc_ch = model.output_vol(alpha, Deriv::Ch);

    DcSensitivities {
        vol_rpe: -(dc_rpe.dot(&w) + v_vol.dot(&db_rpe)),
        vol_ch: -(dc_ch.dot(&w) + v_vol.dot(&db_ch)),
        peak_rpe: -v_peak.dot(&db_rpe),
        peak_ch: -v_peak.dot(&db_ch),
    }
}

/// Absolute output discrepancy over time between a nominal and a perturbed
/// parameterization driven by the same input.
#[derive(Clone, Debug)]
pub struct PerturbationTrace {
    /// Sampling step [s].
    pub delta: f64,
    /// `|y_vol(alpha + dalpha) - y_vol(alpha)|` at samples `0..=N`.
    pub err_vol: Vec<f64>,
    /// `|y_peak(alpha + dalpha) - y_peak(alpha)|` at samples `0..=N`.
    pub err_peak: Vec<f64>,
    /// The input sequence both runs were driven with.
    pub u: Vec<f64>,
}

impl PerturbationTrace {
    pub fn len(&self) -> usize {
        self.err_vol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.err_vol.is_empty()
    }

    /// Last-sample errors `(err_vol, err_peak)`: the asymptotic discrepancy
    /// once both runs have settled.
    pub fn asymptote(&self) -> (f64, f64) {
        (
            *self.err_vol.last().expect("nonempty trace"),
            *self.err_peak.last().expect("nonempty trace"),
        )
    }

    /// Export as CSV with columns `t,err_vol,err_peak`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,err_vol,err_peak")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{}",
                k as f64 * self.delta,
                self.err_vol[k],
                self.err_peak[k]
            )?;
        }
        Ok(())
    }
}

/// Simulate the model at `alpha` and at `alpha + dalpha` under the same
/// input and return the absolute output discrepancies over time.
///
/// `u_policy = Some(u)` drives both runs with `u` (the horizon is then
/// `u.len()` steps); `None` applies the constant input that holds the
/// steady peak temperature at 30 K for the nominal `alpha`, over `steps`
/// steps. The sampling step is the model's configured `dt`.
pub fn perturbation_experiment(
    model: &FullOrderModel,
    alpha: &AbsorptionScale,
    dalpha: (f64, f64),
    steps: usize,
    u_policy: Option<&[f64]>,
) -> Result<PerturbationTrace> {
    let perturbed = AbsorptionScale {
        rpe: alpha.rpe + dalpha.0,
        ch: alpha.ch + dalpha.1,
    };
    alpha.validate()?;
    perturbed.validate().map_err(|_| {
        Error::InvalidConfig(format!(
            "perturbed absorption scale ({}, {}) is not admissible",
            perturbed.rpe, perturbed.ch
        ))
    })?;

    let u_owned;
    let u_seq = match u_policy {
        Some(u) => u,
        None => {
            let u_bar = simulate::steady_state_control(model, alpha, 30.0)?;
            u_owned = vec![u_bar; steps];
            &u_owned
        }
    };

    // The step operator does not depend on alpha, so one factorization
    // serves both runs.
    let stepper = Stepper::new(model, model.grid.dt)?;
    let base = stepper.simulate(alpha, u_seq, None, false)?;
    let pert = stepper.simulate(&perturbed, u_seq, None, false)?;

    let err_vol = base
        .y_vol
        .iter()
        .zip(&pert.y_vol)
        .map(|(a, b)| (b - a).abs())
        .collect();
    let err_peak = base
        .y_peak
        .iter()
        .zip(&pert.y_peak)
        .map(|(a, b)| (b - a).abs())
        .collect();
    Ok(PerturbationTrace {
        delta: stepper.delta(),
        err_vol,
        err_peak,
        u: u_seq.to_vec(),
    })
}

/// All sensitivity quantities for one parameter point, ready for export.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub alpha: AbsorptionScale,
    pub sigma: AbsorptionScale,
    /// Reference input level [W] used for the input-scaled row.
    pub u_ref: f64,
    /// L2 depth-norms of dg/d(alpha_*) in SI units (1/sqrt(m)).
    pub g_norm_rpe_si: f64,
    pub g_norm_ch_si: f64,
    /// The same norms in micrometer units (1/sqrt(um)).
    pub g_norm_rpe_micron: f64,
    pub g_norm_ch_micron: f64,
    /// Micrometer-unit norms scaled by one standard deviation.
    pub g_scaled_rpe: f64,
    pub g_scaled_ch: f64,
    /// Signed DC-gain derivatives [K/W].
    pub dc: DcSensitivities,
    /// |dc| scaled by one standard deviation per parameter [K/W].
    pub dc_sigma: DcSensitivities,
    /// |dc| scaled by one standard deviation and by `u_ref` [K].
    pub dc_sigma_u: DcSensitivities,
}

/// Assemble the full [`SensitivityReport`] at `alpha`, with spreads taken
/// from `stats` and the input-scaled row evaluated at `u_ref` watts.
pub fn sensitivity_report(
    model: &FullOrderModel,
    alpha: &AbsorptionScale,
    stats: &AlphaStats,
    u_ref: f64,
) -> SensitivityReport {
    let layers = &model.layers;
    let sigma = stats.std;
    let (g_scaled_rpe, g_scaled_ch) = scaled_g_sensitivities(layers, alpha, &sigma);
    let dc = dc_sensitivities(model, alpha);
    SensitivityReport {
        alpha: *alpha,
        sigma,
        u_ref,
        g_norm_rpe_si: g_partial_norm(layers, alpha, Deriv::Rpe, Units::Si),
        g_norm_ch_si: g_partial_norm(layers, alpha, Deriv::Ch, Units::Si),
        g_norm_rpe_micron: g_partial_norm(layers, alpha, Deriv::Rpe, Units::Micron),
        g_norm_ch_micron: g_partial_norm(layers, alpha, Deriv::Ch, Units::Micron),
        g_scaled_rpe,
        g_scaled_ch,
        dc,
        dc_sigma: dc.scaled_abs(sigma.rpe, sigma.ch),
        dc_sigma_u: dc.scaled_abs(sigma.rpe * u_ref, sigma.ch * u_ref),
    }
}

impl SensitivityReport {
    /// Column header matching [`SensitivityReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "alpha_rpe,alpha_ch,g_norm_rpe_um,g_norm_ch_um,g_scaled_rpe,g_scaled_ch,\
         dG_vol_d_rpe,dG_vol_d_ch,dG_peak_d_rpe,dG_peak_d_ch,\
         sig_dG_vol_d_rpe,sig_dG_vol_d_ch,sig_dG_peak_d_rpe,sig_dG_peak_d_ch,\
         sigu_dG_vol_d_rpe,sigu_dG_vol_d_ch,sigu_dG_peak_d_rpe,sigu_dG_peak_d_ch"
    }

    /// One CSV row per parameter point.
    pub fn csv_row(&self) -> String {
        let f = |v: f64| format!("{v}");
        [
            f(self.alpha.rpe),
            f(self.alpha.ch),
            f(self.g_norm_rpe_micron),
            f(self.g_norm_ch_micron),
            f(self.g_scaled_rpe),
            f(self.g_scaled_ch),
            f(self.dc.vol_rpe),
            f(self.dc.vol_ch),
            f(self.dc.peak_rpe),
            f(self.dc.peak_ch),
            f(self.dc_sigma.vol_rpe),
            f(self.dc_sigma.vol_ch),
            f(self.dc_sigma.peak_rpe),
            f(self.dc_sigma.peak_ch),
            f(self.dc_sigma_u.vol_rpe),
            f(self.dc_sigma_u.vol_ch),
            f(self.dc_sigma_u.peak_rpe),
            f(self.dc_sigma_u.peak_ch),
        ]
        .join(",")
    }
}

impl fmt::Display for SensitivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "sensitivities at alpha = ({:.4}, {:.4}), sigma = ({:.4}, {:.4}), u_ref = {} W",
            self.alpha.rpe, self.alpha.ch, self.sigma.rpe, self.sigma.ch, self.u_ref
        )?;
        writeln!(
            f,
            "  |dg/d(rpe)| = {:.4} 1/sqrt(um)   |dg/d(ch)| = {:.4} 1/sqrt(um)",
            self.g_norm_rpe_micron, self.g_norm_ch_micron
        )?;
        writeln!(
            f,
            "  sigma-scaled g-norms: rpe {:.4}, ch {:.4} (ratio {:.2})",
            self.g_scaled_rpe,
            self.g_scaled_ch,
            self.g_scaled_rpe / self.g_scaled_ch
        )?;
        writeln!(
            f,
            "  dG/d*        [K/W]: vol ({:.4}, {:.4})   peak ({:.4}, {:.4})",
            self.dc.vol_rpe, self.dc.vol_ch, self.dc.peak_rpe, self.dc.peak_ch
        )?;
        writeln!(
            f,
            "  sigma-scaled [K/W]: vol ({:.4}, {:.4})   peak ({:.4}, {:.4})",
            self.dc_sigma.vol_rpe, self.dc_sigma.vol_ch, self.dc_sigma.peak_rpe, self.dc_sigma.peak_ch
        )?;
        write!(
            f,
            "  x u_ref      [K]  : vol ({:.4}, {:.4})   peak ({:.4}, {:.4})",
            self.dc_sigma_u.vol_rpe,
            self.dc_sigma_u.vol_ch,
            self.dc_sigma_u.peak_rpe,
            self.dc_sigma_u.peak_ch
        )
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to a relative tolerance.
///
/// Classic bisection scheme with the Richardson correction `delta/15`; the
/// acceptance threshold is scaled by the current whole-interval estimate so
/// that the recursion is invariant under rescaling `f` or the interval.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    simpson_step(f, a, b, fa, fm, fb, whole, rel_tol * scale, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
