//! Reduced models with power-series parameter dependence.
//!
//! The input map and the volume output map are analytic in the absorption
//! scales, so both admit exact mixed partial derivatives at a reference
//! parameter. Truncating the series at total degree `k` and treating every
//! coefficient vector as an extra input (respectively output) column yields
//! one parameter-independent augmented LTI system; a single interpolatory
//! reduction of that system gives a basis that serves the whole
//! neighborhood of the reference parameter. Online, the reduced input and
//! output maps are polynomial in the parameter offset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AbsorptionScale, AlphaDomain, FullOrderModel};
use crate::simulate::Stepper;

use super::irka::{irka, IrkaOptions};
use super::rom::{
    continuous_stable, discrete_stable, ParametricRom, RomBuild, RomMeta, RomOps, RomVariant,
};

/// Options of the power-series builder.
#[derive(Clone, Debug)]
pub struct TaylorOptions {
    /// Reduced order.
    pub d: usize,
    /// Total degree of the series truncation.
    pub order: u32,
    /// Implicit-Euler step baked into the discrete maps.
    pub delta: f64,
    /// Expand in the first parameter only (terms in the second are
    /// dropped).
    pub one_param: bool,
    /// Expansion point; defaults to the domain center.
    pub expansion_point: Option<AbsorptionScale>,
    pub domain: AlphaDomain,
    pub irka: IrkaOptions,
}

impl Default for TaylorOptions {
    fn default() -> Self {
        TaylorOptions {
            d: 6,
            order: 3,
            delta: 1e-3,
            one_param: false,
            expansion_point: None,
            domain: AlphaDomain::default(),
            irka: IrkaOptions::default(),
        }
    }
}

/// One series term: degree pair and its projected coefficient vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaylorTerm {
    pub i: u32,
    pub j: u32,
    /// `Wᵀ B_ij`, length d.
    pub b: DVector<f64>,
    /// `δ Wᵀ (I - δA)^{-1} B_ij`, length d.
    pub b_delta: DVector<f64>,
    /// `C_vol,ij V` as a column, length d.
    pub c_vol: DVector<f64>,
}

/// Online data of a power-series reduced model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaylorOps {
    pub expansion_point: AbsorptionScale,
    pub order: u32,
    pub one_param: bool,
    pub terms: Vec<TaylorTerm>,
    /// `C_peak V` as a column, length d (parameter independent).
    pub c_peak: DVector<f64>,
}

impl TaylorOps {
    fn monomial(&self, term: &TaylorTerm, alpha: &AbsorptionScale) -> f64 {
        let da = alpha.rpe - self.expansion_point.rpe;
        let dc = alpha.ch - self.expansion_point.ch;
        da.powi(term.i as i32) * dc.powi(term.j as i32)
    }

    fn sum_terms<F>(&self, alpha: &AbsorptionScale, pick: F) -> (DVector<f64>, DVector<f64>)
    where
        F: Fn(&TaylorTerm) -> &DVector<f64>,
    {
        let d = self.c_peak.len();
        let mut b = DVector::zeros(d);
        let mut c_vol = DVector::zeros(d);
        for term in &self.terms {
            let m = self.monomial(term, alpha);
            b.axpy(m, pick(term), 1.0);
            c_vol.axpy(m, &term.c_vol, 1.0);
        }
        (b, c_vol)
    }

    fn stack_c(&self, c_vol: DVector<f64>) -> DMatrix<f64> {
        let d = self.c_peak.len();
        let mut c = DMatrix::zeros(2, d);
        c.row_mut(0).copy_from(&c_vol.transpose());
        c.row_mut(1).copy_from(&self.c_peak.transpose());
        c
    }

    pub(crate) fn instantiate_continuous(
        &self,
        alpha: &AbsorptionScale,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (b, c_vol) = self.sum_terms(alpha, |t| &t.b);
        (b, self.stack_c(c_vol))
    }

    pub(crate) fn instantiate_discrete(
        &self,
        alpha: &AbsorptionScale,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (b, c_vol) = self.sum_terms(alpha, |t| &t.b_delta);
        (b, self.stack_c(c_vol))
    }
}

/// Degree pairs of the truncated series, graded lexicographically.
fn term_degrees(order: u32, one_param: bool) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for total in 0..=order {
        for i in (0..=total).rev() {
            let j = total - i;
            if one_param && j > 0 {
                continue;
            }
            out.push((i, j));
        }
    }
    out
}

/// Build a power-series reduced model around the expansion point.
pub fn build_taylor_rom(model: &FullOrderModel, opts: &TaylorOptions) -> Result<RomBuild> {
    if opts.d < 1 {
        return Err(Error::InvalidConfig("reduced order must be at least 1".into()));
    }
    let alpha0 = opts.expansion_point.unwrap_or_else(|| opts.domain.center());
    let n = model.n();
    let degrees = term_degrees(opts.order, opts.one_param);
    let m = degrees.len();

    // Coefficient tables of the input and volume-output maps.
    let b_tables: Vec<DVector<f64>> = degrees
        .iter()
        .map(|&(i, j)| model.input_taylor_coeff(&alpha0, i, j))
        .collect();
    let c_tables: Vec<DVector<f64>> = degrees
        .iter()
        .map(|&(i, j)| model.output_vol_taylor_coeff(&alpha0, i, j))
        .collect();

    // Augmented system: coefficient vectors become input columns and output
    // rows alongside the (parameter-independent) peak output.
    let b_aug = DMatrix::from_columns(&b_tables);
    let mut c_aug = DMatrix::zeros(1 + m, n);
    c_aug.row_mut(0).copy_from(&model.output_peak().transpose());
    for (r, ct) in c_tables.iter().enumerate() {
        c_aug.row_mut(1 + r).copy_from(&ct.transpose());
    }

    let outcome = irka(model.a_c(), &b_aug, &c_aug, opts.d, &opts.irka)?;
    let mut notes = Vec::new();
    if !outcome.converged {
        notes.push(format!(
            "augmented reduction stopped after {} iterations with shift change {:.2e}",
            outcome.iterations, outcome.shift_change
        ));
    }
    let pair = outcome.pair;
    let wt = pair.w.transpose();

    // Discrete projections share one factorization of (I - delta A).
    let stepper = Stepper::new(model, opts.delta)?;
    let a_r = outcome.a_r;
    let a_r_delta = {
        let mut sv = DMatrix::zeros(n, opts.d);
        for jcol in 0..opts.d {
            sv.set_column(jcol, &stepper.solve_vec(&pair.v.column(jcol).into_owned()));
        }
        &wt * sv
    };

    let terms: Vec<TaylorTerm> = degrees
        .iter()
        .zip(b_tables.iter().zip(&c_tables))
        .map(|(&(i, j), (bt, ct))| TaylorTerm {
            i,
            j,
            b: &wt * bt,
            b_delta: (&wt * stepper.solve_vec(bt)) * opts.delta,
            c_vol: pair.v.transpose() * ct,
        })
        .collect();
    let c_peak = pair.v.transpose() * model.output_peak();

    let stable_continuous = continuous_stable(&a_r);
    let stable_discrete = discrete_stable(&a_r_delta);
    if !stable_continuous {
        notes.push("reduced continuous generator has a nonnegative eigenvalue".into());
    }
    if !stable_discrete {
        notes.push("reduced discrete map has spectral radius >= 1".into());
    }

    let rom = ParametricRom {
        meta: RomMeta {
            variant: RomVariant::TaylorIrka,
            d: opts.d,
            k: opts.order as usize,
            full_order: n,
            basis_params: vec![alpha0],
            snapshot_params: Vec::new(),
            v_singular_values: Vec::new(),
            w_singular_values: Vec::new(),
            input_singular_values: Vec::new(),
            output_singular_values: Vec::new(),
            stable_continuous,
            stable_discrete,
            notes,
        },
        delta: opts.delta,
        a_r,
        a_r_delta,
        ops: RomOps::Taylor(TaylorOps {
            expansion_point: alpha0,
            order: opts.order,
            one_param: opts.one_param,
            terms,
            c_peak,
        }),
    };
    Ok(RomBuild { rom, pair })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Deriv, GridConfig, LayerStack};

    fn small_model() -> FullOrderModel {
        let grid = GridConfig { n_r: 11, n_z: 33, ..GridConfig::default() };
        FullOrderModel::build(LayerStack::default(), grid).unwrap()
    }

    #[test]
    fn term_degrees_follow_the_total_degree_grading() {
        assert_eq!(
            term_degrees(2, false),
            vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        );
        assert_eq!(term_degrees(2, true), vec![(0, 0), (1, 0), (2, 0)]);
    }

    #[test]
    fn instantiation_at_the_expansion_point_is_the_plain_projection() {
        let model = small_model();
        let opts = TaylorOptions { d: 5, order: 2, ..TaylorOptions::default() };
        let build = build_taylor_rom(&model, &opts).unwrap();
        let alpha0 = build.rom.meta.basis_params[0];

        let (_, b_r, c_r) = build.rom.instantiate(&alpha0);
        let b_proj = build.pair.w.transpose() * model.input_vector(&alpha0, Deriv::None);
        assert!((&b_r - &b_proj).amax() <= 1e-12 * b_proj.amax());

        let cvol_proj = model.output_vol(&alpha0, Deriv::None).transpose() * &build.pair.v;
        let diff = (c_r.row(0) - cvol_proj).amax();
        assert!(diff <= 1e-12 * c_r.row(0).amax());
    }

    #[test]
    fn linear_truncation_reproduces_its_own_slope() {
        // With order 1 the reduced input map is affine in the parameter, so
        // a finite difference recovers the degree-(1,0) table exactly up to
        // rounding.
        let model = small_model();
        let opts = TaylorOptions { d: 4, order: 1, ..TaylorOptions::default() };
        let build = build_taylor_rom(&model, &opts).unwrap();
        let rom = &build.rom;
        let alpha0 = rom.meta.basis_params[0];

        let h = 0.05;
        let shifted = AbsorptionScale::new(alpha0.rpe + h, alpha0.ch);
        let (_, b1, _) = rom.instantiate(&shifted);
        let (_, b0, _) = rom.instantiate(&alpha0);
        let slope = (b1 - b0) / h;

        let table = match &rom.ops {
            RomOps::Taylor(t) => t
                .terms
                .iter()
                .find(|t| (t.i, t.j) == (1, 0))
                .unwrap()
                .b
                .clone(),
            _ => unreachable!(),
        };
        assert!((&slope - &table).amax() <= 1e-9 * table.amax().max(1e-300));
    }

    #[test]
    fn higher_truncation_tightens_the_input_map_error() {
        // Model-level check on unprojected vectors: the series with degree 4
        // is at least as accurate as degree 2 away from the expansion
        // point.
        let model = small_model();
        let alpha0 = AlphaDomain::default().center();
        let probe = AbsorptionScale::new(alpha0.rpe + 0.25, alpha0.ch + 0.04);
        let truth = model.input_vector(&probe, Deriv::None);

        let series_error = |order: u32| {
            let mut approx = DVector::zeros(model.n());
            for (i, j) in term_degrees(order, false) {
                let mono = (probe.rpe - alpha0.rpe).powi(i as i32)
                    * (probe.ch - alpha0.ch).powi(j as i32);
                approx.axpy(mono, &model.input_taylor_coeff(&alpha0, i, j), 1.0);
            }
            (&approx - &truth).amax() / truth.amax()
        };
        let e2 = series_error(2);
        let e4 = series_error(4);
        assert!(e4 <= e2, "degree-4 error {e4} vs degree-2 error {e2}");
        assert!(e4 < 0.05, "degree-4 relative error {e4} unexpectedly large");
    }

    #[test]
    fn dc_gain_tracks_the_full_model_near_the_expansion_point() {
        let model = small_model();
        let opts = TaylorOptions { d: 6, order: 3, ..TaylorOptions::default() };
        let rom = build_taylor_rom(&model, &opts).unwrap().rom;
        let alpha0 = rom.meta.basis_params[0];

        // The reduction balances accuracy across all series coefficients,
        // so the gain at one parameter is approximate rather than
        // interpolated; the tolerance reflects that.
        let (gv_full, gp_full) = crate::simulate::dc_gain(&model, &alpha0);
        let (gv, gp) = rom.dc_gain(&alpha0).unwrap();
        assert!(
            (gv - gv_full).abs() <= 0.15 * gv_full.abs(),
            "volume gain {gv} vs {gv_full}"
        );
        assert!(
            (gp - gp_full).abs() <= 0.15 * gp_full.abs(),
            "peak gain {gp} vs {gp_full}"
        );
    }

    #[test]
    fn one_parameter_mode_keeps_only_first_parameter_terms() {
        let model = small_model();
        let opts = TaylorOptions {
            d: 4,
            order: 3,
            one_param: true,
            ..TaylorOptions::default()
        };
        let rom = build_taylor_rom(&model, &opts).unwrap().rom;
        match &rom.ops {
            RomOps::Taylor(t) => {
                assert_eq!(t.terms.len(), 4);
                assert!(t.terms.iter().all(|term| term.j == 0));
            }
            _ => unreachable!(),
        }
    }
}
