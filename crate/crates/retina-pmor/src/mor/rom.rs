//! Parametric reduced-order models: storage, online instantiation, and the
//! global-basis + interpolation builder.
//!
//! A reduced model keeps two time-invariant system matrices — the projected
//! continuous generator `A_r = Wᵀ A V` and the projected implicit-Euler map
//! `A_rδ = Wᵀ (I - δA)^{-1} V` — plus parameter-affine machinery for the
//! input and output maps. Instantiating at a parameter touches only
//! reduced-size data: the cost is independent of the full order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AbsorptionScale, AlphaDomain, BeamParams, Deriv, FullOrderModel, NodeEvalData};
use crate::simulate::{steady_state_control, Stepper, Trajectory};

use super::deim::DeimOperator;
use super::taylor::TaylorOps;
use super::ProjectionPair;

/// Which offline strategy produced a reduced model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RomVariant {
    /// Parameter dependence expanded in a truncated power series around a
    /// reference parameter; basis from one reduction of the augmented
    /// system.
    TaylorIrka,
    /// Basis stacked from local reductions at snapshot parameters; input
    /// and output maps sampled sparsely via discrete empirical
    /// interpolation.
    GlobalBasisDeim,
}

impl std::fmt::Display for RomVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RomVariant::TaylorIrka => write!(f, "taylor"),
            RomVariant::GlobalBasisDeim => write!(f, "deim"),
        }
    }
}

/// Provenance and diagnostics of a reduced model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RomMeta {
    pub variant: RomVariant,
    /// Reduced order.
    pub d: usize,
    /// Expansion degree (Taylor) or interpolation rank (DEIM).
    pub k: usize,
    /// Full order the model was reduced from.
    pub full_order: usize,
    /// Parameters used to build the projection basis.
    pub basis_params: Vec<AbsorptionScale>,
    /// Parameters used for input/output snapshots (empty for Taylor).
    pub snapshot_params: Vec<AbsorptionScale>,
    /// Singular values of the stacked local trial bases (empty for Taylor).
    pub v_singular_values: Vec<f64>,
    /// Singular values of the stacked local test bases (empty for Taylor).
    pub w_singular_values: Vec<f64>,
    /// Singular values of the input snapshot matrix (empty for Taylor).
    pub input_singular_values: Vec<f64>,
    /// Singular values of the output snapshot matrix (empty for Taylor).
    pub output_singular_values: Vec<f64>,
    /// All eigenvalues of the reduced continuous generator have negative
    /// real part.
    pub stable_continuous: bool,
    /// The reduced implicit-Euler map has spectral radius below one.
    pub stable_discrete: bool,
    pub notes: Vec<String>,
}

/// Parameter-dependent input/output machinery, by variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum RomOps {
    Taylor(TaylorOps),
    Deim(DeimOps),
}

/// Online data of an interpolation-based reduced model. Everything here is
/// sized by the reduced order `d` and the interpolation ranks; nothing
/// scales with the full order.
///
/// Only the parameter-dependent maps are interpolated: the input vector and
/// the volume-output row. The peak output row is parameter-independent, so
/// its exact projection is stored directly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeimOps {
    pub beam: BeamParams,
    /// Mesh data of the rows where the input map is sampled (length k_b).
    pub input_nodes: Vec<NodeEvalData>,
    /// Mesh data of the rows where the volume output is sampled (length
    /// k_c).
    pub output_nodes: Vec<NodeEvalData>,
    /// Maps sampled input entries to `B_r = Wᵀ B(α)` (d x k_b); fitted over
    /// the snapshot parameters.
    pub b_factor: DMatrix<f64>,
    /// Maps sampled input entries to the discrete input vector
    /// `δ Wᵀ (I - δA)^{-1} B(α)` (d x k_b).
    pub b_factor_delta: DMatrix<f64>,
    /// Transposed map from sampled volume-output entries to the volume row
    /// of `C_r = C_vol(α) V` (k_c x d).
    pub c_factor: DMatrix<f64>,
    /// Exact projected peak row `C_peak V` (the peak-node row of `V`).
    pub c_peak: DVector<f64>,
    pub input_indices: Vec<usize>,
    pub output_indices: Vec<usize>,
    pub input_interp_cond: f64,
    pub output_interp_cond: f64,
}

impl DeimOps {
    fn b_entries(&self, alpha: &AbsorptionScale) -> DVector<f64> {
        DVector::from_iterator(
            self.input_nodes.len(),
            self.input_nodes.iter().map(|n| n.input_entry(&self.beam, alpha)),
        )
    }

    /// Sampled volume-output entries (length k_c).
    fn c_entries(&self, alpha: &AbsorptionScale) -> DVector<f64> {
        DVector::from_iterator(
            self.output_nodes.len(),
            self.output_nodes.iter().map(|n| n.output_entries(&self.beam, alpha)[0]),
        )
    }

    fn c_r(&self, alpha: &AbsorptionScale) -> DMatrix<f64> {
        let vol = self.c_factor.transpose() * self.c_entries(alpha);
        let d = self.c_peak.len();
        DMatrix::from_fn(2, d, |i, j| if i == 0 { vol[j] } else { self.c_peak[j] })
    }
}

/// A reduced model ready for online use, serializable as JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametricRom {
    pub meta: RomMeta,
    /// Step size baked into the discrete maps.
    pub delta: f64,
    /// Projected continuous generator `Wᵀ A V`.
    pub a_r: DMatrix<f64>,
    /// Projected implicit-Euler map `Wᵀ (I - δA)^{-1} V`.
    pub a_r_delta: DMatrix<f64>,
    pub ops: RomOps,
}

/// Builder output: the reduced model plus the projection pair it came from
/// (the pair is full-order-sized and is not serialized with the model).
#[derive(Clone, Debug)]
pub struct RomBuild {
    pub rom: ParametricRom,
    pub pair: ProjectionPair,
}

impl ParametricRom {
    pub fn d(&self) -> usize {
        self.meta.d
    }

    /// Continuous reduced triple `(A_r, B_r(alpha), C_r(alpha))` with
    /// `C_r` stacking the volume and peak outputs as rows.
    pub fn instantiate(&self, alpha: &AbsorptionScale) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        match &self.ops {
            RomOps::Taylor(t) => {
                let (b, c) = t.instantiate_continuous(alpha);
                (self.a_r.clone(), b, c)
            }
            RomOps::Deim(ops) => {
                let b = &ops.b_factor * ops.b_entries(alpha);
                (self.a_r.clone(), b, ops.c_r(alpha))
            }
        }
    }

    /// Discrete reduced triple `(A_rδ, B_rδ(alpha), C_r(alpha))` realizing
    /// one implicit-Euler step `z⁺ = A_rδ z + B_rδ u`.
    pub fn instantiate_discrete(
        &self,
        alpha: &AbsorptionScale,
    ) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        match &self.ops {
            RomOps::Taylor(t) => {
                let (b, c) = t.instantiate_discrete(alpha);
                (self.a_r_delta.clone(), b, c)
            }
            RomOps::Deim(ops) => {
                let b = &ops.b_factor_delta * ops.b_entries(alpha);
                (self.a_r_delta.clone(), b, ops.c_r(alpha))
            }
        }
    }

    /// Run the reduced recursion from the origin over an input sequence,
    /// sampling outputs at every index `0..=N` like the full-order
    /// simulation. The trajectory's `final_state` is the reduced state.
    pub fn simulate(&self, alpha: &AbsorptionScale, u_seq: &[f64]) -> Result<Trajectory> {
        if u_seq.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidConfig("non-finite input sequence".into()));
        }
        let (a, b, c) = self.instantiate_discrete(alpha);
        let d = self.d();
        let mut z = DVector::zeros(d);
        let mut y_vol = Vec::with_capacity(u_seq.len() + 1);
        let mut y_peak = Vec::with_capacity(u_seq.len() + 1);
        let c_vol = c.row(0).transpose();
        let c_peak = c.row(1).transpose();
        y_vol.push(0.0);
        y_peak.push(0.0);
        for &u in u_seq {
            z = &a * &z + &b * u;
            y_vol.push(c_vol.dot(&z));
            y_peak.push(c_peak.dot(&z));
        }
        if !(y_vol.last().unwrap().is_finite() && y_peak.last().unwrap().is_finite()) {
            return Err(Error::Numerical(
                "reduced simulation produced non-finite outputs".into(),
            ));
        }
        Ok(Trajectory {
            delta: self.delta,
            u: u_seq.to_vec(),
            y_vol,
            y_peak,
            states: None,
            final_state: z,
        })
    }

    /// Steady gains `(g_vol, g_peak)` per unit input, from the fixed point
    /// of the discrete recursion (sign chosen so heating inputs give
    /// positive gains). With an exact projection this equals the
    /// full-order DC gain identically.
    pub fn dc_gain(&self, alpha: &AbsorptionScale) -> Result<(f64, f64)> {
        let (a, b, c) = self.instantiate_discrete(alpha);
        let d = self.d();
        let fixed = (DMatrix::<f64>::identity(d, d) - a)
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numerical("reduced discrete map has a unit eigenvalue".into()))?;
        let y = c * fixed;
        Ok((y[(0, 0)], y[(1, 0)]))
    }

    /// Constant input driving the reduced peak output to `target` in steady
    /// state.
    pub fn steady_state_control(&self, alpha: &AbsorptionScale, target: f64) -> Result<f64> {
        let (_, g_peak) = self.dc_gain(alpha)?;
        if g_peak <= 0.0 || !g_peak.is_finite() {
            return Err(Error::Numerical(format!(
                "reduced peak gain {g_peak} is not positive"
            )));
        }
        Ok(target / g_peak)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let rom: ParametricRom =
            serde_json::from_reader(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        if rom.a_r.nrows() != rom.meta.d || rom.a_r_delta.nrows() != rom.meta.d {
            return Err(Error::Dimension(
                "stored reduced matrices do not match the recorded order".into(),
            ));
        }
        Ok(rom)
    }
}

/// Options of the global-basis + interpolation builder.
#[derive(Clone, Debug)]
pub struct GbDeimOptions {
    /// Reduced order.
    pub d: usize,
    /// Interpolation rank for the input and output maps.
    pub k: usize,
    /// Implicit-Euler step baked into the discrete maps (and used for the
    /// snapshot trajectories behind the trial basis).
    pub delta: f64,
    /// Restrict the study to the first parameter (the second is pinned to
    /// the domain center).
    pub one_param: bool,
    pub domain: AlphaDomain,
    /// Override the basis snapshot parameters (default: 3x3 grid, or 5
    /// points on the line in the one-parameter study).
    pub basis_params: Option<Vec<AbsorptionScale>>,
    /// Override the input/output snapshot parameters (default: 5x4 grid, or
    /// 20 points on the line).
    pub snapshot_params: Option<Vec<AbsorptionScale>>,
}

impl Default for GbDeimOptions {
    fn default() -> Self {
        GbDeimOptions {
            d: 6,
            k: 3,
            delta: 1e-3,
            one_param: false,
            domain: AlphaDomain::default(),
            basis_params: None,
            snapshot_params: None,
        }
    }
}

impl GbDeimOptions {
    pub fn basis_parameter_set(&self) -> Vec<AbsorptionScale> {
        self.basis_params.clone().unwrap_or_else(|| {
            if self.one_param {
                self.domain.line_rpe(5, self.domain.center().ch)
            } else {
                self.domain.grid(3, 3)
            }
        })
    }

    pub fn snapshot_parameter_set(&self) -> Vec<AbsorptionScale> {
        self.snapshot_params.clone().unwrap_or_else(|| {
            if self.one_param {
                self.domain.line_rpe(20, self.domain.center().ch)
            } else {
                self.domain.grid(5, 4)
            }
        })
    }
}

/// Build a reduced model with a global projection basis and interpolated
/// parameter maps.
///
/// The trial basis is a measure-weighted proper orthogonal decomposition of
/// state snapshots taken from one constant-control run per basis parameter,
/// so it spans the fast switch-on layer and the near-steady regime across
/// the whole domain. The test basis is the cell-measure dual of the trial
/// basis: the weighted operator `diag(w) A_c` is symmetric negative
/// definite, so the projected generator is similar to a symmetric
/// negative-definite matrix and the reduced model is stable by
/// construction, in continuous time and under the implicit-Euler map
/// alike. The two-sided pair from [`global_basis`](super::global_basis)
/// trades that guarantee for oblique-projection conditioning that degrades
/// sharply as the stacked test directions decouple from the trial ones.
pub fn build_gb_deim_rom(model: &FullOrderModel, opts: &GbDeimOptions) -> Result<RomBuild> {
    let proj = gb_projection(model, opts)?;
    let snapshot_params = opts.snapshot_parameter_set();
    let rom = deim_rom_from_pair(
        model,
        proj.pair.clone(),
        &snapshot_params,
        opts.k,
        opts.delta,
        RomMetaSeed {
            basis_params: proj.basis_params,
            v_singular_values: proj.v_singular_values,
            w_singular_values: proj.w_singular_values,
            notes: proj.notes,
        },
    )?;
    Ok(RomBuild { rom, pair: proj.pair })
}

/// A finished global projection basis plus its provenance.
pub(crate) struct GbProjection {
    pub pair: ProjectionPair,
    pub basis_params: Vec<AbsorptionScale>,
    pub v_singular_values: Vec<f64>,
    pub w_singular_values: Vec<f64>,
    pub notes: Vec<String>,
}

/// The order-independent part of the global-basis build: a measure-weighted
/// orthonormal snapshot basis that can be cut at any reduced order.
pub(crate) struct GbBasis {
    /// `sqrt(measure)`-weighted orthonormal basis of the snapshot stack.
    q: DMatrix<f64>,
    sqrt_measure: DVector<f64>,
    pub singular_values: Vec<f64>,
    pub basis_params: Vec<AbsorptionScale>,
}

impl GbBasis {
    /// Simulate one constant-control run per basis parameter (in parallel)
    /// and compress the sampled states. The input holds the steady peak at
    /// the usual 30 K operating rise; samples are dense right after
    /// switch-on, where the fast boundary layer lives, and sparse once the
    /// slow diffusive tail dominates. Columns are normalized so that every
    /// epoch of the transient carries equal weight in the decomposition.
    pub fn compute(model: &FullOrderModel, opts: &GbDeimOptions) -> Result<Self> {
        let basis_params = opts.basis_parameter_set();
        let horizon = 720usize;
        let keep = |i: usize| {
            i <= 30 || (i <= 60 && i % 2 == 0) || (i <= 200 && i % 5 == 0) || i % 20 == 0
        };
        let stepper = Stepper::new(model, opts.delta)?;
        let runs: Vec<Result<Trajectory>> = basis_params
            .par_iter()
            .map(|a| {
                let u = steady_state_control(model, a, 30.0)?;
                stepper.simulate(a, &vec![u; horizon], None, true)
            })
            .collect();

        let sqrt_measure = model.cell_measure().map(f64::sqrt);
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for run in runs {
            let traj = run?;
            for (i, x) in traj.states.as_ref().expect("states were stored").iter().enumerate() {
                if i >= 1 && keep(i) {
                    let nrm = x.norm();
                    if nrm > 0.0 {
                        cols.push(x.component_mul(&sqrt_measure) / nrm);
                    }
                }
            }
        }
        let (q, singular_values) =
            super::orthonormal_basis(&DMatrix::from_columns(&cols), None)?;
        Ok(GbBasis { q, sqrt_measure, singular_values, basis_params })
    }

    /// Cut the basis at order `d` and pair it with its cell-measure dual.
    /// The trial columns are orthonormal in the measure inner product, so
    /// the dual test basis is simply the measure-scaled trial basis and the
    /// projected generator inherits definiteness from the weighted operator.
    pub fn projection(&self, d: usize) -> Result<GbProjection> {
        if d < 1 || d > self.q.ncols() {
            return Err(Error::InvalidConfig(format!(
                "reduced order d = {d} must lie in 1..={} (snapshot basis rank)",
                self.q.ncols()
            )));
        }
        let n = self.q.nrows();
        let v = DMatrix::from_fn(n, d, |r, c| self.q[(r, c)] / self.sqrt_measure[r]);
        let dv = DMatrix::from_fn(n, d, |r, c| self.q[(r, c)] * self.sqrt_measure[r]);
        let w = super::biorthonormalize(&v, dv)?;
        Ok(GbProjection {
            pair: ProjectionPair { v, w },
            basis_params: self.basis_params.clone(),
            v_singular_values: self.singular_values.clone(),
            w_singular_values: Vec::new(),
            notes: vec![
                "trial basis: measure-weighted orthogonal decomposition of trajectory \
                 snapshots; test basis: cell-measure dual"
                    .into(),
            ],
        })
    }
}

/// Basis stage shared by the single-model builder and the sweep.
pub(crate) fn gb_projection(model: &FullOrderModel, opts: &GbDeimOptions) -> Result<GbProjection> {
    GbBasis::compute(model, opts)?.projection(opts.d)
}

/// Basis-related metadata handed from the basis stage to the interpolation
/// stage.
pub(crate) struct RomMetaSeed {
    pub basis_params: Vec<AbsorptionScale>,
    pub v_singular_values: Vec<f64>,
    pub w_singular_values: Vec<f64>,
    pub notes: Vec<String>,
}

impl Default for RomMetaSeed {
    fn default() -> Self {
        RomMetaSeed {
            basis_params: Vec::new(),
            v_singular_values: Vec::new(),
            w_singular_values: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// Interpolation stage: given a projection pair, sample the input and
/// output maps at the snapshot parameters, build interpolation operators,
/// and precompute the reduced factors.
pub(crate) fn deim_rom_from_pair(
    model: &FullOrderModel,
    pair: ProjectionPair,
    snapshot_params: &[AbsorptionScale],
    k: usize,
    delta: f64,
    seed: RomMetaSeed,
) -> Result<ParametricRom> {
    if k < 1 || k > snapshot_params.len().max(1) {
        return Err(Error::InvalidConfig(format!(
            "interpolation rank k = {k} must lie in 1..={}",
            snapshot_params.len()
        )));
    }
    deim_rom_with_ranks(model, pair, snapshot_params, k, k, k, delta, seed)
}

/// As [`deim_rom_from_pair`] but with independent requested ranks for the
/// input and output stages (`k` is only recorded as the nominal order).
#[allow(clippy::too_many_arguments)]
pub(crate) fn deim_rom_with_ranks(
    model: &FullOrderModel,
    pair: ProjectionPair,
    snapshot_params: &[AbsorptionScale],
    k: usize,
    k_b_req: usize,
    k_c_req: usize,
    delta: f64,
    seed: RomMetaSeed,
) -> Result<ParametricRom> {
    pair.validate()?;
    let n = model.n();
    let d = pair.d();
    if snapshot_params.is_empty() {
        return Err(Error::InvalidConfig(
            "interpolation stage needs at least one snapshot parameter".into(),
        ));
    }
    if k_b_req < 1 || k_c_req < 1 {
        return Err(Error::InvalidConfig(
            "interpolation ranks must be at least 1".into(),
        ));
    }

    // Snapshot matrices of the parameter-dependent maps: input vectors and
    // volume-output covectors, one column per parameter. The peak row is
    // parameter-independent and is projected exactly instead of sampled.
    let b_cols: Vec<DVector<f64>> = snapshot_params
        .iter()
        .map(|a| model.input_vector(a, Deriv::None))
        .collect();
    let b_snapshots = DMatrix::from_columns(&b_cols);
    let c_cols: Vec<DVector<f64>> = snapshot_params
        .iter()
        .map(|a| model.output_vol(a, Deriv::None))
        .collect();
    let c_snapshots = DMatrix::from_columns(&c_cols);

    // Each stage can use at most as many directions as its snapshot family
    // spans, so the requested rank is clamped per stage: the input family on
    // a tensor grid of scales is far from full column rank (the absorption
    // profile factors into per-layer parts coupled through one shared
    // scalar), and the output family carries one extra direction from the
    // parameter-independent peak row.
    let (q_b, sv_b) = super::orthonormal_basis(&b_snapshots, None)?;
    let (q_c, sv_c) = super::orthonormal_basis(&c_snapshots, None)?;
    let k_b = k_b_req.min(q_b.ncols());
    let k_c = k_c_req.min(q_c.ncols());

    // Discrete solves: one factorization of (I - delta A), one column solve
    // per snapshot.
    let stepper = Stepper::new(model, delta)?;
    let ns = snapshot_params.len();
    let mut b_snapshots_delta = DMatrix::zeros(n, ns);
    for j in 0..ns {
        let col = stepper.solve_vec(&b_snapshots.column(j).into_owned());
        b_snapshots_delta.set_column(j, &col);
    }

    // What the reduced system consumes is not the full-length maps but
    // their projections — WᵀB(α) and C_vol(α)V — and those families decay
    // far faster than the raw snapshot families: the projection bases are
    // smooth in space, so the fine-scale directions that dominate the raw
    // singular value tails are nearly invisible to them. Truncating the raw
    // snapshot decomposition at small k therefore wastes the rank budget on
    // directions the reduced model cannot see. Instead, the dominant
    // parameter modes of the projected families (their leading right
    // singular directions, completed with raw snapshot modes once the
    // projected rank is exhausted) are mapped back through the snapshot
    // matrices to full-length representatives, and the greedy row selection
    // runs on those. At full rank both choices span the whole snapshot
    // column space, so exact reconstruction at snapshot parameters is
    // unaffected.
    let wt = pair.w.transpose();
    let t_b_cont = &wt * &b_snapshots;
    let t_b_disc = &wt * &b_snapshots_delta * delta;
    let mut t_b = DMatrix::zeros(2 * d, ns);
    let (nb_cont, nb_disc) = (t_b_cont.norm(), t_b_disc.norm());
    if nb_cont > 0.0 {
        t_b.view_mut((0, 0), (d, ns)).copy_from(&(t_b_cont / nb_cont));
    }
    if nb_disc > 0.0 {
        t_b.view_mut((d, 0), (d, ns)).copy_from(&(t_b_disc / nb_disc));
    }
    let g_b = target_modes(&t_b, &b_snapshots, k_b)?;
    let (u_b, _) = super::orthonormal_basis(&(&b_snapshots * g_b), None)?;
    let k_b = k_b.min(u_b.ncols());
    let op_b = DeimOperator::build(u_b.columns(0, k_b).into_owned())?;

    let t_c = pair.v.transpose() * &c_snapshots;
    let g_c = target_modes(&t_c, &c_snapshots, k_c)?;
    let (u_c, _) = super::orthonormal_basis(&(&c_snapshots * g_c), None)?;
    let k_c = k_c.min(u_c.ncols());
    let op_c = DeimOperator::build(u_c.columns(0, k_c).into_owned())?;

    // Combination factors: the sampling rows come from the greedy
    // interpolation selection above, but the matrices mapping sampled
    // entries to reduced data are least-squares fits of the *projected*
    // map families over all snapshots. The fit minimizes exactly the error
    // component that reaches the reduced system — a plain interpolation
    // factor is optimal for reconstructing the full-length maps, not their
    // projections — and the two coincide when the sampled family is spanned
    // at rank k.
    let b_factor = lstsq_factor(&select_rows(&b_snapshots, &op_b.indices), &t_b_cont)?;
    let b_factor_delta = lstsq_factor(&select_rows(&b_snapshots, &op_b.indices), &t_b_disc)?;
    let c_factor = lstsq_factor(&select_rows(&c_snapshots, &op_c.indices), &t_c)?.transpose();

    let a_r = {
        let mut av = DMatrix::zeros(n, d);
        for j in 0..d {
            let col = model.a_c().mul_vec(pair.v.column(j).as_slice());
            av.set_column(j, &DVector::from_vec(col));
        }
        &wt * av
    };
    let a_r_delta = {
        let mut sv = DMatrix::zeros(n, d);
        for j in 0..d {
            sv.set_column(j, &stepper.solve_vec(&pair.v.column(j).into_owned()));
        }
        &wt * sv
    };

    let stable_continuous = continuous_stable(&a_r);
    let stable_discrete = discrete_stable(&a_r_delta);
    let mut notes = seed.notes;
    if !stable_continuous {
        notes.push("reduced continuous generator has a nonnegative eigenvalue".into());
    }
    if !stable_discrete {
        notes.push("reduced discrete map has spectral radius >= 1".into());
    }
    if k_b < k_b_req {
        notes.push(format!("input interpolation rank clamped to snapshot rank {k_b}"));
    }
    if k_c < k_c_req {
        notes.push(format!("output interpolation rank clamped to snapshot rank {k_c}"));
    }

    let ops = DeimOps {
        beam: model.beam_params().clone(),
        input_nodes: op_b.indices.iter().map(|&i| model.node_eval_data(i)).collect(),
        output_nodes: op_c.indices.iter().map(|&i| model.node_eval_data(i)).collect(),
        b_factor,
        b_factor_delta,
        c_factor,
        c_peak: pair.v.row(model.peak_index()).transpose(),
        input_indices: op_b.indices.clone(),
        output_indices: op_c.indices.clone(),
        input_interp_cond: op_b.cond,
        output_interp_cond: op_c.cond,
    };

    Ok(ParametricRom {
        meta: RomMeta {
            variant: RomVariant::GlobalBasisDeim,
            d,
            k,
            full_order: n,
            basis_params: seed.basis_params,
            snapshot_params: snapshot_params.to_vec(),
            v_singular_values: seed.v_singular_values,
            w_singular_values: seed.w_singular_values,
            input_singular_values: sv_b,
            output_singular_values: sv_c,
            stable_continuous,
            stable_discrete,
            notes,
        },
        delta,
        a_r,
        a_r_delta,
        ops: RomOps::Deim(ops),
    })
}

/// Rows `idx` of `m`, stacked in order.
fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

/// The matrix `M` minimizing `‖M X − Y‖_F` for `X: k x s`, `Y: d x s`
/// (minimum-norm solution when the sampled family is rank deficient).
fn lstsq_factor(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = x.transpose().svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    let mt = svd
        .solve(&y.transpose(), tol)
        .map_err(|e| Error::Numerical(format!("sampled-entry factor fit failed: {e}")))?;
    Ok(mt.transpose())
}

pub(crate) fn continuous_stable(a_r: &DMatrix<f64>) -> bool {
    a_r.clone().complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

pub(crate) fn discrete_stable(a_r_delta: &DMatrix<f64>) -> bool {
    a_r_delta
        .clone()
        .complex_eigenvalues()
        .iter()
        .all(|l| l.norm() < 1.0)
}

/// Fraction of snapshot energy captured by the `m` leading singular values.
pub fn cumulative_energy(singular_values: &[f64], m: usize) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    singular_values.iter().take(m).map(|s| s * s).sum::<f64>() / total
}

/// Reduced-side row view used by the controller: peak output row of
/// `C_r(alpha)`.
pub fn peak_row(c_r: &DMatrix<f64>) -> RowDVector<f64> {
    RowDVector::from_row_slice(c_r.row(1).clone_owned().as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridConfig, LayerStack};
    use crate::mor::irka::stacked_outputs;
    use crate::mor::IrkaOptions;
    use std::time::Instant;

    fn small_model() -> FullOrderModel {
        let grid = GridConfig { n_r: 11, n_z: 33, ..GridConfig::default() };
        FullOrderModel::build(LayerStack::default(), grid).unwrap()
    }

    fn tiny_model() -> FullOrderModel {
        let grid = GridConfig {
            n_r: 4,
            beam_radius: 1e-3 / 3.0,
            n_z: 14,
            ..GridConfig::default()
        };
        FullOrderModel::build(LayerStack::default(), grid).unwrap()
    }

    fn identity_pair(n: usize) -> ProjectionPair {
        ProjectionPair {
            v: DMatrix::identity(n, n),
            w: DMatrix::identity(n, n),
        }
    }

    #[test]
    fn identity_projection_reproduces_the_full_simulation() {
        let model = tiny_model();
        let n = model.n();
        // A 2x2 tensor grid of the absorption scales yields an input
        // snapshot family of rank exactly 3 (the per-layer profiles factor
        // into an RPE part and a choroid part coupled through one shared
        // scalar) and an output family of rank 4 (the same three
        // directions, rescaled per column, plus the constant peak row).
        // Requesting k = 4 therefore clamps the input stage to 3 and makes
        // both interpolations exact on the grid.
        let snaps = AlphaDomain::default().grid(2, 2);
        let rom = deim_rom_from_pair(
            &model,
            identity_pair(n),
            &snaps,
            4,
            1e-3,
            RomMetaSeed::default(),
        )
        .unwrap();

        let alpha = snaps[1];
        let u: Vec<f64> = (0..240).map(|k| 0.03 * (1.0 + 0.2 * (k as f64 * 0.05).sin())).collect();
        let stepper = Stepper::new(&model, 1e-3).unwrap();
        let full = stepper.simulate(&alpha, &u, None, false).unwrap();
        let red = rom.simulate(&alpha, &u).unwrap();

        let scale = full
            .y_peak
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for k in 0..full.len() {
            assert!(
                (full.y_vol[k] - red.y_vol[k]).abs() <= 1e-8 * scale,
                "vol mismatch at {k}: {} vs {}",
                full.y_vol[k],
                red.y_vol[k]
            );
            assert!(
                (full.y_peak[k] - red.y_peak[k]).abs() <= 1e-8 * scale,
                "peak mismatch at {k}"
            );
        }
    }

    #[test]
    fn identity_projection_matches_the_full_dc_gain_exactly() {
        let model = tiny_model();
        // k = 4 spans both snapshot families on the corner grid (see the
        // rank note in the simulation test above).
        let snaps = AlphaDomain::default().grid(2, 2);
        let rom = deim_rom_from_pair(
            &model,
            identity_pair(model.n()),
            &snaps,
            4,
            1e-3,
            RomMetaSeed::default(),
        )
        .unwrap();
        let alpha = snaps[2];
        let (gv_full, gp_full) = crate::simulate::dc_gain(&model, &alpha);
        let (gv, gp) = rom.dc_gain(&alpha).unwrap();
        assert!((gv - gv_full).abs() <= 1e-10 * gv_full.abs(), "{gv} vs {gv_full}");
        assert!((gp - gp_full).abs() <= 1e-10 * gp_full.abs(), "{gp} vs {gp_full}");
    }

    #[test]
    fn interpolation_is_exact_at_snapshot_parameters_with_full_rank() {
        // k = 4 spans both corner-grid snapshot families exactly (see the
        // rank note in the identity-projection test), so interpolation
        // reproduces every snapshot.
        let model = small_model();
        let opts = GbDeimOptions {
            d: 5,
            k: 4,
            snapshot_params: Some(AlphaDomain::default().grid(2, 2)),
            ..GbDeimOptions::default()
        };
        let build = build_gb_deim_rom(&model, &opts).unwrap();
        let rom = &build.rom;
        let wt = build.pair.w.transpose();
        let snaps = rom.meta.snapshot_params.clone();

        for alpha in &snaps {
            let b_full = model.input_vector(alpha, Deriv::None);
            let b_proj = &wt * &b_full;
            let (_, b_r, c_r) = rom.instantiate(alpha);
            let err_b = (&b_r - &b_proj).amax();
            assert!(
                err_b <= 1e-12 * b_proj.amax().max(f64::MIN_POSITIVE),
                "input map error {err_b} at ({}, {})",
                alpha.rpe,
                alpha.ch
            );

            let c_proj = stacked_outputs(&model, alpha) * &build.pair.v;
            let err_c = (&c_r - &c_proj).amax();
            assert!(
                err_c <= 1e-10 * c_proj.amax().max(f64::MIN_POSITIVE),
                "output map error {err_c}"
            );
        }
    }

    #[test]
    fn default_build_is_stable_and_accurate_at_the_center() {
        let model = small_model();
        let build = build_gb_deim_rom(&model, &GbDeimOptions::default()).unwrap();
        let rom = build.rom;
        assert!(rom.meta.stable_continuous, "notes: {:?}", rom.meta.notes);
        assert!(rom.meta.stable_discrete);

        let alpha = AlphaDomain::default().center();
        let (gv_full, gp_full) = crate::simulate::dc_gain(&model, &alpha);
        let (gv, gp) = rom.dc_gain(&alpha).unwrap();
        assert!((gv - gv_full).abs() <= 1e-2 * gv_full.abs(), "{gv} vs {gv_full}");
        assert!((gp - gp_full).abs() <= 1e-2 * gp_full.abs(), "{gp} vs {gp_full}");
    }

    #[test]
    fn json_round_trip_preserves_the_model_bit_for_bit() {
        let model = small_model();
        let opts = GbDeimOptions { d: 4, k: 3, ..GbDeimOptions::default() };
        let rom = build_gb_deim_rom(&model, &opts).unwrap().rom;

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("rom.json");
        let p2 = dir.path().join("rom2.json");
        rom.save_json(&p1).unwrap();
        let loaded = ParametricRom::load_json(&p1).unwrap();
        loaded.save_json(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let alpha = AbsorptionScale::new(0.9, 0.12);
        let (_, b1, c1) = rom.instantiate_discrete(&alpha);
        let (_, b2, c2) = loaded.instantiate_discrete(&alpha);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn online_cost_does_not_scale_with_the_full_order() {
        let coarse = tiny_model();
        let fine = small_model(); // ~8x more nodes

        let opts = |_m: &FullOrderModel| GbDeimOptions {
            d: 4,
            k: 3,
            snapshot_params: Some(AlphaDomain::default().grid(3, 2)),
            basis_params: Some(vec![AlphaDomain::default().center()]),
            ..GbDeimOptions::default()
        };
        let rom_c = build_gb_deim_rom(&coarse, &opts(&coarse)).unwrap().rom;
        let rom_f = build_gb_deim_rom(&fine, &opts(&fine)).unwrap().rom;

        // Structural check: the online data is k- and d-sized only.
        if let RomOps::Deim(ops) = &rom_f.ops {
            assert_eq!(ops.b_factor.shape(), (4, 3));
            assert_eq!(ops.b_factor_delta.shape(), (4, 3));
            assert_eq!(ops.c_factor.shape(), (3, 4));
            assert_eq!(ops.input_nodes.len(), 3);
            assert_eq!(ops.output_nodes.len(), 3);
        } else {
            panic!("expected interpolation ops");
        }

        let time_per_call = |rom: &ParametricRom| {
            let alphas = AlphaDomain::default().grid(10, 10);
            let start = Instant::now();
            let mut sink = 0.0;
            for _ in 0..40 {
                for a in &alphas {
                    let (_, b, c) = rom.instantiate_discrete(a);
                    sink += b[0] + c[(0, 0)];
                }
            }
            assert!(sink.is_finite());
            start.elapsed().as_secs_f64() / (40.0 * alphas.len() as f64)
        };
        let t_coarse = time_per_call(&rom_c).max(1e-9);
        let t_fine = time_per_call(&rom_f);
        assert!(
            t_fine <= 3.0 * t_coarse,
            "online cost grew with full order: {t_fine:.2e}s vs {t_coarse:.2e}s"
        );
    }

    #[test]
    #[ignore]
    fn probe_gb_stability_across_orders() {
        use super::super::irka::global_basis;

        for (name, model) in [
            ("small", small_model()),
            (
                "default",
                FullOrderModel::build(LayerStack::default(), GridConfig::default()).unwrap(),
            ),
        ] {
            let alpha = AlphaDomain::default().center();
            let (gv_full, gp_full) = crate::simulate::dc_gain(&model, &alpha);
            let basis_params = AlphaDomain::default().grid(3, 3);
            let snaps = AlphaDomain::default().grid(5, 4);
            let measure = model.cell_measure();

            for d in 4..=8 {
                let gb =
                    global_basis(&model, &basis_params, d, d, &IrkaOptions::default()).unwrap();
                let v = gb.pair.v.clone();
                let dv = DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| measure[r] * v[(r, c)]);
                let variants: Vec<(&str, ProjectionPair)> = vec![
                    ("two-sided", gb.pair.clone()),
                    ("galerkin ", ProjectionPair { v: v.clone(), w: v.clone() }),
                    (
                        "measure  ",
                        ProjectionPair {
                            v: v.clone(),
                            w: super::super::biorthonormalize(&v, dv).unwrap(),
                        },
                    ),
                ];
                for (tag, pair) in variants {
                    let rom = deim_rom_from_pair(
                        &model,
                        pair,
                        &snaps,
                        3,
                        1e-3,
                        RomMetaSeed::default(),
                    )
                    .unwrap();
                    let (gv, gp) = rom.dc_gain(&alpha).unwrap_or((f64::NAN, f64::NAN));
                    println!(
                        "{name} d={d} {tag}: cont={} disc={} rel_dc_vol={:.3e} rel_dc_peak={:.3e}",
                        rom.meta.stable_continuous,
                        rom.meta.stable_discrete,
                        (gv - gv_full).abs() / gv_full.abs(),
                        (gp - gp_full).abs() / gp_full.abs(),
                    );
                }
            }
        }
    }

    #[test]
    #[ignore]
    fn probe_transient_error_structure() {
        use super::super::irka::{global_basis, irka, stacked_outputs};
        use crate::simulate::{steady_state_control, Stepper};

        let model = FullOrderModel::build(LayerStack::default(), GridConfig::default()).unwrap();
        let domain = AlphaDomain::default();
        let center = domain.center();
        let mut test_alphas = vec![center.clone()];
        test_alphas.extend(domain.grid(2, 2));
        let measure = model.cell_measure();
        let basis_params = domain.grid(3, 3);
        let delta = 1e-3;
        let horizon = 720usize;
        let stepper = Stepper::new(&model, delta).unwrap();

        let ss_cols: Vec<DVector<f64>> = basis_params
            .iter()
            .map(|a| {
                let b = model.input_vector(a, Deriv::None);
                let x = DVector::from_vec(model.a_c_lu().solve(b.as_slice()));
                let nrm = x.norm();
                x / nrm
            })
            .collect();
        let (q_ss, _) =
            super::super::orthonormal_basis(&DMatrix::from_columns(&ss_cols), None).unwrap();

        let meas_pair = |vm: DMatrix<f64>| {
            let dvm = DMatrix::from_fn(vm.nrows(), vm.ncols(), |r, c| measure[r] * vm[(r, c)]);
            ProjectionPair {
                w: super::super::biorthonormalize(&vm, dvm).unwrap(),
                v: vm,
            }
        };

        let profile = |tag: &str, d: usize, pair: &ProjectionPair| {
            let dd = pair.d();
            let mut av = DMatrix::zeros(model.n(), dd);
            for j in 0..dd {
                av.set_column(
                    j,
                    &DVector::from_vec(model.a_c().mul_vec(pair.v.column(j).as_slice())),
                );
            }
            let a_r = pair.w.transpose() * av;
            let lu = (DMatrix::identity(dd, dd) - delta * &a_r).lu();
            for alpha in &test_alphas {
                let u = steady_state_control(&model, alpha, 30.0).unwrap();
                let full = stepper.simulate(alpha, &vec![u; horizon], None, false).unwrap();
                let b_r = pair.w.transpose() * model.input_vector(alpha, Deriv::None);
                let c_vol_r =
                    (model.output_vol(alpha, Deriv::None).transpose() * &pair.v).transpose();
                let peak_row = pair.v.row(model.peak_index()).transpose();
                let mut x = DVector::zeros(dd);
                let mut worst = [(0.0f64, 0usize); 2];
                let mut num = [0.0f64; 2];
                let mut den = [0.0f64; 2];
                for i in 1..=horizon {
                    x = lu.solve(&(&x + delta * u * &b_r)).unwrap();
                    let ev = c_vol_r.dot(&x) - full.y_vol[i];
                    let ep = peak_row.dot(&x) - full.y_peak[i];
                    let rv = ev.abs() / full.y_vol[i].abs();
                    let rp = ep.abs() / full.y_peak[i].abs();
                    num[0] += ev * ev;
                    den[0] += full.y_vol[i] * full.y_vol[i];
                    num[1] += ep * ep;
                    den[1] += full.y_peak[i] * full.y_peak[i];
                    if rv > worst[0].0 {
                        worst[0] = (rv, i);
                    }
                    if rp > worst[1].0 {
                        worst[1] = (rp, i);
                    }
                }
                println!(
                    "{tag} d={d} a=({:.3},{:.3}) inf_vol {:.2e}@{:<3} inf_peak {:.2e}@{:<3} l2_vol {:.2e} l2_peak {:.2e}",
                    alpha.rpe, alpha.ch,
                    worst[0].0, worst[0].1, worst[1].0, worst[1].1,
                    (num[0] / den[0]).sqrt(), (num[1] / den[1]).sqrt(),
                );
            }
        };

        // Trajectory snapshots for POD: dense early, sparse late.
        let sqrt_measure = measure.map(|m| m.sqrt());
        let keep = |i: usize| {
            (i >= 1 && i <= 40 && i % 2 == 0)
                || (i > 40 && i <= 200 && i % 10 == 0)
                || (i > 200 && i % 40 == 0)
        };
        let mut pod_cols: Vec<DVector<f64>> = Vec::new();
        for a in &basis_params {
            let u = steady_state_control(&model, a, 30.0).unwrap();
            let traj = stepper.simulate(a, &vec![u; horizon], None, true).unwrap();
            for (i, x) in traj.states.as_ref().unwrap().iter().enumerate() {
                if keep(i) {
                    pod_cols.push(x.component_mul(&sqrt_measure) / x.norm());
                }
            }
        }
        let (q_pod, sv_pod) =
            super::super::orthonormal_basis(&DMatrix::from_columns(&pod_cols), None).unwrap();
        println!(
            "pod snapshots: {} cols, sv ratios {:?}",
            pod_cols.len(),
            sv_pod.iter().take(10).map(|s| s / sv_pod[0]).collect::<Vec<_>>()
        );

        let b_center = DMatrix::from_column_slice(
            model.n(),
            1,
            model.input_vector(&center, Deriv::None).as_slice(),
        );
        let c_center = stacked_outputs(&model, &center);
        for d in [5usize, 6, 7, 8] {
            let ic = irka(model.a_c(), &b_center, &c_center, d, &IrkaOptions::default()).unwrap();
            let gb = global_basis(&model, &basis_params, d, d, &IrkaOptions::default()).unwrap();

            let v_pod = DMatrix::from_fn(model.n(), d, |r, c| q_pod[(r, c)] / sqrt_measure[r]);

            // Hybrid: remix the truncated stacked basis with the steady family
            // in the measure geometry.
            let mut hyb_cols: Vec<DVector<f64>> = Vec::new();
            for j in 0..d {
                hyb_cols.push(gb.pair.v.column(j).component_mul(&sqrt_measure));
            }
            for j in 0..q_ss.ncols() {
                hyb_cols.push(q_ss.column(j).component_mul(&sqrt_measure));
            }
            let (q_hyb, _) =
                super::super::orthonormal_basis(&DMatrix::from_columns(&hyb_cols), None).unwrap();
            let v_hyb = DMatrix::from_fn(model.n(), d, |r, c| q_hyb[(r, c)] / sqrt_measure[r]);

            profile("irka2side", d, &ic.pair);
            profile("gb-meas  ", d, &meas_pair(gb.pair.v.clone()));
            profile("hyb-meas ", d, &meas_pair(v_hyb));
            profile("pod-meas ", d, &meas_pair(v_pod.clone()));

            // DEIM on top of the POD pair: the complete reduced model at k=3.
            let rom = deim_rom_from_pair(
                &model,
                meas_pair(v_pod),
                &AlphaDomain::default().grid(5, 4),
                3,
                delta,
                RomMetaSeed::default(),
            )
            .unwrap();
            let cell = crate::mor::scan::error_scan(
                &model,
                &rom,
                &test_alphas,
                crate::mor::scan::ScanConfig::default(),
            )
            .unwrap();
            println!(
                "pod+deim3 d={d} stable={} inf_vol {:.2e} inf_peak {:.2e} l2_vol {:.2e} l2_peak {:.2e}",
                rom.meta.stable_discrete, cell.err_inf_vol, cell.err_inf_peak,
                cell.err_l2_vol, cell.err_l2_peak,
            );
            println!();
        }
    }

    #[test]
    #[ignore]
    fn probe_error_decomposition() {
        use super::super::irka::{global_basis, stacked_outputs};
        let model = FullOrderModel::build(LayerStack::default(), GridConfig::default()).unwrap();
        let alpha = AlphaDomain::default().center();
        let (gv_full, gp_full) = crate::simulate::dc_gain(&model, &alpha);
        let basis_params = AlphaDomain::default().grid(3, 3);
        let snaps = AlphaDomain::default().grid(5, 4);
        let measure = model.cell_measure();

        // Steady-state family over the basis parameters.
        let ss_cols: Vec<DVector<f64>> = basis_params
            .iter()
            .map(|a| {
                let b = model.input_vector(a, Deriv::None);
                let x = DVector::from_vec(model.a_c_lu().solve(b.as_slice()));
                let nrm = x.norm();
                -x / nrm
            })
            .collect();
        let ss_stack = DMatrix::from_columns(&ss_cols);
        let (q_ss, sv_ss) = super::super::orthonormal_basis(&ss_stack, None).unwrap();
        println!(
            "steady family: rank={} svs={:?}",
            q_ss.ncols(),
            sv_ss.iter().map(|s| s / sv_ss[0]).collect::<Vec<_>>()
        );

        let alpha_off = AbsorptionScale::new(0.55, 0.13);
        let (gv_off, gp_off) = crate::simulate::dc_gain(&model, &alpha_off);

        for d in [5usize, 6, 7, 8] {
            let gb = global_basis(&model, &basis_params, d, d, &IrkaOptions::default()).unwrap();
            let v = gb.pair.v.clone();

            let mut variants: Vec<(String, ProjectionPair)> = Vec::new();
            let meas_pair = |vm: DMatrix<f64>| {
                let dvm =
                    DMatrix::from_fn(vm.nrows(), vm.ncols(), |r, c| measure[r] * vm[(r, c)]);
                ProjectionPair {
                    w: super::super::biorthonormalize(&vm, dvm).unwrap(),
                    v: vm,
                }
            };
            variants.push(("measure ".into(), meas_pair(v.clone())));
            for r_s in [3usize, 4, 5] {
                if r_s >= d {
                    continue;
                }
                let vss = q_ss.columns(0, r_s).into_owned();
                // Deflate the stacked basis against the steady directions and
                // keep the strongest remainder.
                let defl = &v - &vss * (vss.transpose() * &v);
                let (qd, _) = super::super::orthonormal_basis(&defl, None).unwrap();
                let take = (d - r_s).min(qd.ncols());
                let mut cols: Vec<DVector<f64>> = Vec::new();
                for j in 0..r_s {
                    cols.push(vss.column(j).into_owned());
                }
                for j in 0..take {
                    cols.push(qd.column(j).into_owned());
                }
                variants.push((format!("ss{r_s}+meas"), meas_pair(DMatrix::from_columns(&cols))));
            }

            for (tag, pair) in &variants {
                let dd = pair.d();
                // Exact projection (no interpolation of the maps).
                let a_r = {
                    let mut av = DMatrix::zeros(model.n(), dd);
                    for j in 0..dd {
                        let col = model.a_c().mul_vec(pair.v.column(j).as_slice());
                        av.set_column(j, &DVector::from_vec(col));
                    }
                    pair.w.transpose() * av
                };
                let lu = a_r.clone().lu();
                let g_at = |al: &AbsorptionScale| {
                    let b_r = pair.w.transpose() * model.input_vector(al, Deriv::None);
                    let c_r = stacked_outputs(&model, al) * &pair.v;
                    -(&c_r * lu.solve(&b_r).unwrap())
                };
                let g = g_at(&alpha);
                let go = g_at(&alpha_off);
                println!(
                    "d={d} {tag}: ctr vol={:.3e} peak={:.3e} | off vol={:.3e} peak={:.3e} stable={}",
                    (g[0] - gv_full).abs() / gv_full.abs(),
                    (g[1] - gp_full).abs() / gp_full.abs(),
                    (go[0] - gv_off).abs() / gv_off.abs(),
                    (go[1] - gp_off).abs() / gp_off.abs(),
                    continuous_stable(&a_r),
                );
            }
        }

        // Interpolation-stage reconstruction quality at the center, by rank.
        let b_cols: Vec<DVector<f64>> =
            snaps.iter().map(|a| model.input_vector(a, Deriv::None)).collect();
        let b_snapshots = DMatrix::from_columns(&b_cols);
        let c_cols: Vec<DVector<f64>> =
            snaps.iter().map(|a| model.output_vol(a, Deriv::None)).collect();
        let c_snapshots = DMatrix::from_columns(&c_cols);
        let b_center = model.input_vector(&alpha, Deriv::None);
        let c_center_vol = model.output_vol(&alpha, Deriv::None);
        for k in 2..=6 {
            let (qb, svb) = super::super::orthonormal_basis(&b_snapshots, None).unwrap();
            let (qc, svc) = super::super::orthonormal_basis(&c_snapshots, None).unwrap();
            let kb = k.min(qb.ncols());
            let kc = k.min(qc.ncols());
            let ob = DeimOperator::build(qb.columns(0, kb).into_owned()).unwrap();
            let oc = DeimOperator::build(qc.columns(0, kc).into_owned()).unwrap();
            let b_rec = ob.approximate(&ob.sample(&b_center));
            let c_rec = oc.approximate(&oc.sample(&c_center_vol));
            println!(
                "k={k}: rel_b={:.3e} rel_c_vol={:.3e} e_b(k)={:.6} e_c(k)={:.6}",
                (&b_rec - &b_center).norm() / b_center.norm(),
                (&c_rec - &c_center_vol).norm() / c_center_vol.norm(),
                cumulative_energy(&svb, k),
                cumulative_energy(&svc, k),
            );
        }
    }

    #[test]
    #[ignore]
    fn probe_local_irka_convergence() {
        use super::super::irka::{irka, stacked_outputs};
        let model = FullOrderModel::build(LayerStack::default(), GridConfig::default()).unwrap();
        for a in AlphaDomain::default().grid(3, 3) {
            let b = DMatrix::from_column_slice(
                model.n(),
                1,
                model.input_vector(&a, Deriv::None).as_slice(),
            );
            let c = stacked_outputs(&model, &a);
            match irka(model.a_c(), &b, &c, 6, &IrkaOptions::default()) {
                Ok(out) => println!(
                    "({:.3}, {:.3}): converged={} iters={} change={:.2e}",
                    a.rpe, a.ch, out.converged, out.iterations, out.shift_change
                ),
                Err(e) => println!("({:.3}, {:.3}): failed: {e}", a.rpe, a.ch),
            }
        }
    }

    #[test]
    #[ignore]
    fn probe_json_diff() {
        let model = small_model();
        let opts = GbDeimOptions { d: 4, k: 3, ..GbDeimOptions::default() };
        let rom = build_gb_deim_rom(&model, &opts).unwrap().rom;
        let p1 = std::path::PathBuf::from("/tmp/rom1.json");
        let p2 = std::path::PathBuf::from("/tmp/rom2.json");
        rom.save_json(&p1).unwrap();
        let loaded = ParametricRom::load_json(&p1).unwrap();
        loaded.save_json(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        println!("len1={} len2={}", b1.len(), b2.len());
        if let Some(i) = (0..b1.len().min(b2.len())).find(|&i| b1[i] != b2[i]) {
            let lo = i.saturating_sub(120);
            println!("first diff at byte {i}");
            println!("p1: {}", String::from_utf8_lossy(&b1[lo..(i + 80).min(b1.len())]));
            println!("p2: {}", String::from_utf8_lossy(&b2[lo..(i + 80).min(b2.len())]));
        } else {
            println!("no byte diff in common prefix");
        }
    }

    #[test]
    #[ignore]
    fn probe_stage_isolation() {
        use crate::mor::scan::{error_scan_against, FullScan, ScanConfig};

        let model = FullOrderModel::build(LayerStack::default(), GridConfig::default()).unwrap();
        let domain = AlphaDomain::default();

        for (name, snaps) in [
            ("1p", domain.line_rpe(20, domain.center().ch)),
            ("2p", domain.grid(5, 4)),
        ] {
            let b_cols: Vec<DVector<f64>> =
                snaps.iter().map(|a| model.input_vector(a, Deriv::None)).collect();
            let c_cols: Vec<DVector<f64>> =
                snaps.iter().map(|a| model.output_vol(a, Deriv::None)).collect();
            let (_, sv_b) =
                super::super::orthonormal_basis(&DMatrix::from_columns(&b_cols), None).unwrap();
            let (_, sv_c) =
                super::super::orthonormal_basis(&DMatrix::from_columns(&c_cols), None).unwrap();
            for (fam, sv) in [("B", &sv_b), ("C", &sv_c)] {
                let rel: Vec<String> =
                    sv.iter().take(8).map(|s| format!("{:.2e}", s / sv[0])).collect();
                let en: Vec<String> = (1..=6)
                    .map(|m| format!("{:.6}", cumulative_energy(sv, m)))
                    .collect();
                println!("{name} {fam}: sv/sv1 [{}] energy [{}]", rel.join(" "), en.join(" "));
            }
        }

        let scan_alphas = domain.grid(5, 5);
        let scan = FullScan::new(&model, &scan_alphas, ScanConfig::default()).unwrap();
        let snaps = domain.grid(5, 4);
        let opts = GbDeimOptions { d: 8, ..GbDeimOptions::default() };
        let basis = GbBasis::compute(&model, &opts).unwrap();
        for d in [6usize, 8] {
            let pair = basis.projection(d).unwrap().pair;
            for (kb, kc) in [(3, 3), (3, 20), (20, 3), (4, 4), (3, 4), (4, 3), (20, 20)] {
                let rom = deim_rom_with_ranks(
                    &model,
                    pair.clone(),
                    &snaps,
                    3,
                    kb,
                    kc,
                    1e-3,
                    RomMetaSeed::default(),
                )
                .unwrap();
                let cell = error_scan_against(&scan, &rom).unwrap();
                println!(
                    "2p d={d} kb={kb:2} kc={kc:2}: inf_vol={:.3e} inf_peak={:.3e} l2_vol={:.3e} l2_peak={:.3e}",
                    cell.err_inf_vol, cell.err_inf_peak, cell.err_l2_vol, cell.err_l2_peak
                );
            }
        }
    }

    #[test]
    fn cumulative_energy_is_monotone_and_normalized() {
        let sv = [3.0, 1.0, 0.5, 0.1];
        let e1 = cumulative_energy(&sv, 1);
        let e3 = cumulative_energy(&sv, 3);
        let e4 = cumulative_energy(&sv, 4);
        assert!(e1 > 0.8 && e1 < e3 && e3 < e4);
        assert!((e4 - 1.0).abs() < 1e-15);
    }
}
