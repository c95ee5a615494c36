//! Absorbed-power profile of the laser beam along the optical axis.
//!
//! Only the pigmented layers absorb. With `a` and `c` the dimensionless
//! absorption scales of the RPE and choroid, `m` and `mc` the reference
//! absorption coefficients, and `w` the depth measured from the top of the
//! RPE, the per-depth absorbed fraction is
//!
//! ```text
//! g(w) = a*m*exp(-w*a*m)                              w in the RPE,
//! g(w) = c*mc*exp(-d_rpe*a*m - (w - z_ch)*c*mc)       w in the choroid,
//! g(w) = 0                                            elsewhere,
//! ```
//!
//! i.e. Beer-Lambert attenuation with the transparent layers contributing
//! nothing to the optical depth. All partial derivatives in (a, c) have
//! closed forms, which this module evaluates to arbitrary mixed order for
//! estimation Jacobians, sensitivity norms, and Taylor coefficients.

use serde::{Deserialize, Serialize};

use super::AbsorptionScale;

/// Evaluation point of the absorbed-power profile, in layer-local
/// coordinates. `Rpe(w)` holds the depth from the RPE top; `Choroid(s)` the
/// depth from the choroid top. Both coordinates are in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GPoint {
    /// Outside the absorbing layers: g = 0 identically.
    Zero,
    Rpe(f64),
    Choroid(f64),
}

/// Self-contained evaluator for the beam profile and the source scaling.
///
/// Reduced-order models store a copy so that selected operator entries can be
/// re-evaluated online without the mesh or the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// Reference absorption coefficient of the RPE [1/m].
    pub mu_rpe: f64,
    /// Reference absorption coefficient of the choroid [1/m].
    pub mu_choroid: f64,
    /// RPE thickness [m]; sets the optical depth a*mu_rpe*d_rpe shading the choroid.
    pub d_rpe: f64,
    /// Choroid thickness [m].
    pub d_choroid: f64,
    /// Source scaling 1/(rho * c_p * pi * R_I^2) applied to input entries.
    pub input_scale: f64,
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

impl BeamParams {
    /// g at the given point.
    pub fn g(&self, p: GPoint, alpha: &AbsorptionScale) -> f64 {
        self.g_deriv(p, alpha, 0, 0)
    }

    /// Mixed partial derivative d^{i+j} g / (d a^i d c^j) at the given point.
    pub fn g_deriv(&self, p: GPoint, alpha: &AbsorptionScale, i: u32, j: u32) -> f64 {
        let a = alpha.rpe;
        let c = alpha.ch;
        match p {
            GPoint::Zero => 0.0,
            GPoint::Rpe(w) => {
                if j > 0 {
                    return 0.0;
                }
                let m = self.mu_rpe;
                let beta = w * m;
                let e = (-beta * a).exp();
                if i == 0 {
                    a * m * e
                } else {
                    m * (-beta).powi(i as i32 - 1) * e * (i as f64 - beta * a)
                }
            }
            GPoint::Choroid(s) => {
                let mc = self.mu_choroid;
                // Optical depth through the RPE per unit a.
                let q = self.d_rpe * self.mu_rpe;
                let gs = s * mc;
                let e = (-q * a - gs * c).exp();
                let fa = (-q).powi(i as i32);
                if j == 0 {
                    c * mc * fa * e
                } else {
                    mc * fa * (-gs).powi(j as i32 - 1) * e * (j as f64 - gs * c)
                }
            }
        }
    }

    /// Taylor coefficient of g around `alpha0`: g_deriv / (i! j!).
    pub fn g_taylor_coeff(&self, p: GPoint, alpha0: &AbsorptionScale, i: u32, j: u32) -> f64 {
        self.g_deriv(p, alpha0, i, j) / (factorial(i) * factorial(j))
    }

    /// Closed-form total absorbed fraction of the beam power,
    /// `1 - exp(-a*m*d_rpe - c*mc*d_ch)`.
    pub fn absorbed_fraction(&self, alpha: &AbsorptionScale) -> f64 {
        let od = alpha.rpe * self.mu_rpe * self.d_rpe + alpha.ch * self.mu_choroid * self.d_choroid;
        1.0 - (-od).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BeamParams {
        BeamParams {
            mu_rpe: 1204e2,
            mu_choroid: 270e2,
            d_rpe: 6e-6,
            d_choroid: 400e-6,
            input_scale: 1.0,
        }
    }

    fn alpha() -> AbsorptionScale {
        AbsorptionScale { rpe: 0.7636, ch: 0.0986 }
    }

    #[test]
    fn g_values_match_closed_forms() {
        let bp = params();
        let al = alpha();
        // Top of RPE: g = a*m.
        let g0 = bp.g(GPoint::Rpe(0.0), &al);
        assert!((g0 - al.rpe * bp.mu_rpe).abs() < 1e-9 * g0.abs());
        // Bottom of RPE: attenuated by the full RPE optical depth.
        let gl = bp.g(GPoint::Rpe(bp.d_rpe), &al);
        let expect = al.rpe * bp.mu_rpe * (-bp.d_rpe * al.rpe * bp.mu_rpe).exp();
        assert!((gl - expect).abs() < 1e-9 * expect.abs());
        // Top of choroid: shaded by the RPE only.
        let gc = bp.g(GPoint::Choroid(0.0), &al);
        let expect_c = al.ch * bp.mu_choroid * (-bp.d_rpe * al.rpe * bp.mu_rpe).exp();
        assert!((gc - expect_c).abs() < 1e-9 * expect_c.abs());
        // Transparent layers.
        assert_eq!(bp.g(GPoint::Zero, &al), 0.0);
    }

    /// All closed-form derivatives up to total order 4 agree with central
    /// finite differences.
    #[test]
    fn derivatives_match_finite_differences() {
        let bp = params();
        let al = alpha();
        let pts = [GPoint::Rpe(2.5e-6), GPoint::Choroid(1.3e-4)];
        let h = 1e-5;
        for p in pts {
            for i in 0..3u32 {
                for j in 0..3u32 {
                    if i + j == 0 || i + j > 4 {
                        continue;
                    }
                    // FD of order (i, j) by nested central differences on the
                    // (i-1, j) or (i, j-1) closed form.
                    let fd = if i > 0 {
                        let up = bp.g_deriv(
                            p,
                            &AbsorptionScale { rpe: al.rpe + h, ch: al.ch },
                            i - 1,
                            j,
                        );
                        let dn = bp.g_deriv(
                            p,
                            &AbsorptionScale { rpe: al.rpe - h, ch: al.ch },
                            i - 1,
                            j,
                        );
                        (up - dn) / (2.0 * h)
                    } else {
                        let up = bp.g_deriv(
                            p,
                            &AbsorptionScale { rpe: al.rpe, ch: al.ch + h },
                            i,
                            j - 1,
                        );
                        let dn = bp.g_deriv(
                            p,
                            &AbsorptionScale { rpe: al.rpe, ch: al.ch - h },
                            i,
                            j - 1,
                        );
                        (up - dn) / (2.0 * h)
                    };
                    let an = bp.g_deriv(p, &al, i, j);
                    let scale = an.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (an - fd).abs() <= 1e-5 * scale,
                        "deriv ({i},{j}) at {p:?}: analytic {an}, fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn taylor_coefficients_rebuild_g() {
        // Degree-12 Taylor around alpha0 evaluated at a nearby alpha must
        // reproduce g to tight tolerance (entire function of (a, c)).
        let bp = params();
        let al0 = alpha();
        let al = AbsorptionScale { rpe: al0.rpe + 0.2, ch: al0.ch + 0.03 };
        for p in [GPoint::Rpe(4.0e-6), GPoint::Choroid(2.9e-4)] {
            let mut acc = 0.0;
            for i in 0..=12u32 {
                for j in 0..=12u32 {
                    if i + j > 12 {
                        continue;
                    }
                    acc += bp.g_taylor_coeff(p, &al0, i, j)
                        * (al.rpe - al0.rpe).powi(i as i32)
                        * (al.ch - al0.ch).powi(j as i32);
                }
            }
            let exact = bp.g(p, &al);
            assert!(
                (acc - exact).abs() < 1e-9 * exact.abs().max(1.0),
                "taylor sum {acc} vs exact {exact} at {p:?}"
            );
        }
    }
}
