//! Reduced-versus-full output error studies over the parameter domain.
//!
//! Every study drives both models with the same per-parameter constant
//! input — the one that steers the full model's peak output to the target
//! temperature rise in steady state — from a zero initial state. Full-order
//! trajectories are computed once per parameter set ([`FullScan`]) and
//! reused across every reduced model measured against them.
//!
//! Two error summaries are reported per output channel:
//!
//! * worst pointwise relative error over all parameters and sample times
//!   (reference samples below a floor are skipped, e.g. the zero initial
//!   sample);
//! * worst, over parameters, of the time-series l2 error relative to the
//!   reference l2 norm.
//!
//! Reduced models that are not usable — unstable in either the continuous
//! or the discrete sense, or whose construction failed — appear as dagger
//! (`†`) entries in exported tables.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AbsorptionScale, AlphaDomain, FullOrderModel};
use crate::simulate::{steady_state_control, Stepper, Trajectory};

use super::irka::IrkaOptions;
use super::rom::{
    deim_rom_from_pair, GbBasis, GbDeimOptions, ParametricRom, RomMetaSeed, RomVariant,
};
use super::taylor::{build_taylor_rom, TaylorOptions};

/// Shared settings of an error study.
#[derive(Clone, Copy, Debug)]
pub struct ScanConfig {
    /// Implicit-Euler step shared by the full and reduced simulations.
    pub delta: f64,
    /// Number of input steps per trajectory.
    pub horizon: usize,
    /// Steady-state peak temperature rise (K) the per-parameter input is
    /// chosen to reach.
    pub target: f64,
    /// Reference samples with magnitude below this floor are skipped by the
    /// pointwise relative error.
    pub output_floor: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            delta: 1e-3,
            horizon: 720,
            target: 30.0,
            output_floor: 1e-9,
        }
    }
}

/// Full-order reference trajectories for a parameter set, computed once.
pub struct FullScan {
    pub config: ScanConfig,
    pub alphas: Vec<AbsorptionScale>,
    /// Constant input applied for each parameter.
    pub inputs: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

impl FullScan {
    /// Simulate the full model at every parameter (in parallel; the order
    /// of results matches `alphas`).
    pub fn new(
        model: &FullOrderModel,
        alphas: &[AbsorptionScale],
        config: ScanConfig,
    ) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidConfig("error scan needs at least one parameter".into()));
        }
        let stepper = Stepper::new(model, config.delta)?;
        let runs: Vec<Result<(f64, Trajectory)>> = alphas
            .par_iter()
            .map(|alpha| {
                let u = steady_state_control(model, alpha, config.target)?;
                let traj = stepper.simulate(alpha, &vec![u; config.horizon], None, false)?;
                Ok((u, traj))
            })
            .collect();
        let mut inputs = Vec::with_capacity(alphas.len());
        let mut trajectories = Vec::with_capacity(alphas.len());
        for run in runs {
            let (u, traj) = run?;
            inputs.push(u);
            trajectories.push(traj);
        }
        Ok(FullScan {
            config,
            alphas: alphas.to_vec(),
            inputs,
            trajectories,
        })
    }
}

/// Error summary of one reduced model over a scan. For unusable models
/// `stable` is false and the error fields are NaN.
#[derive(Clone, Copy, Debug)]
pub struct ErrorCell {
    pub stable: bool,
    pub err_inf_vol: f64,
    pub err_inf_peak: f64,
    pub err_l2_vol: f64,
    pub err_l2_peak: f64,
}

impl ErrorCell {
    pub fn unusable() -> Self {
        ErrorCell {
            stable: false,
            err_inf_vol: f64::NAN,
            err_inf_peak: f64::NAN,
            err_l2_vol: f64::NAN,
            err_l2_peak: f64::NAN,
        }
    }

    fn metric(&self, metric: ErrorMetric) -> (f64, f64) {
        match metric {
            ErrorMetric::Inf => (self.err_inf_vol, self.err_inf_peak),
            ErrorMetric::L2 => (self.err_l2_vol, self.err_l2_peak),
        }
    }
}

/// Measure a reduced model against precomputed full-order trajectories.
pub fn error_scan_against(scan: &FullScan, rom: &ParametricRom) -> Result<ErrorCell> {
    let rel = (rom.delta - scan.config.delta).abs() / scan.config.delta;
    if rel > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "reduced model step {} does not match scan step {}",
            rom.delta, scan.config.delta
        )));
    }
    if !(rom.meta.stable_continuous && rom.meta.stable_discrete) {
        return Ok(ErrorCell::unusable());
    }

    let floor = scan.config.output_floor;
    let mut cell = ErrorCell {
        stable: true,
        err_inf_vol: 0.0,
        err_inf_peak: 0.0,
        err_l2_vol: 0.0,
        err_l2_peak: 0.0,
    };
    for (i, alpha) in scan.alphas.iter().enumerate() {
        let full = &scan.trajectories[i];
        let red = rom.simulate(alpha, &full.u)?;
        let (iv, lv) = channel_errors(&full.y_vol, &red.y_vol, floor);
        let (ip, lp) = channel_errors(&full.y_peak, &red.y_peak, floor);
        cell.err_inf_vol = cell.err_inf_vol.max(iv);
        cell.err_inf_peak = cell.err_inf_peak.max(ip);
        cell.err_l2_vol = cell.err_l2_vol.max(lv);
        cell.err_l2_peak = cell.err_l2_peak.max(lp);
    }
    Ok(cell)
}

/// Convenience wrapper: build the reference scan and measure one model.
pub fn error_scan(
    model: &FullOrderModel,
    rom: &ParametricRom,
    alphas: &[AbsorptionScale],
    config: ScanConfig,
) -> Result<ErrorCell> {
    let scan = FullScan::new(model, alphas, config)?;
    error_scan_against(&scan, rom)
}

/// Pointwise-max and relative-l2 errors of one output channel.
fn channel_errors(reference: &[f64], reduced: &[f64], floor: f64) -> (f64, f64) {
    debug_assert_eq!(reference.len(), reduced.len());
    let mut inf = 0.0f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (yf, yr) in reference.iter().zip(reduced) {
        let e = yr - yf;
        num += e * e;
        den += yf * yf;
        if yf.abs() >= floor {
            inf = inf.max(e.abs() / yf.abs());
        }
    }
    let l2 = if den > 0.0 {
        (num / den).sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (inf, l2)
}

/// Error cells of one variant over a (k, d) grid: rows index `k_values`,
/// columns index `d_values`.
#[derive(Clone, Debug)]
pub struct ErrorTable {
    pub variant: RomVariant,
    pub d_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub cells: Vec<Vec<ErrorCell>>,
}

impl ErrorTable {
    pub fn cell(&self, k: usize, d: usize) -> Option<&ErrorCell> {
        let ki = self.k_values.iter().position(|&v| v == k)?;
        let di = self.d_values.iter().position(|&v| v == d)?;
        self.cells.get(ki)?.get(di)
    }
}

/// Which error summary a table export carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorMetric {
    Inf,
    L2,
}

/// Write tables in long form: one row per (variant, k, d) with both output
/// channels. Unusable cells carry the dagger marker.
pub fn write_error_tables_csv<W: Write>(
    mut w: W,
    tables: &[&ErrorTable],
    metric: ErrorMetric,
) -> Result<()> {
    let (col_vol, col_peak) = match metric {
        ErrorMetric::Inf => ("err_inf_vol", "err_inf_peak"),
        ErrorMetric::L2 => ("err_l2_vol", "err_l2_peak"),
    };
    writeln!(w, "variant,k,d,{col_vol},{col_peak}")?;
    for table in tables {
        for (ki, &k) in table.k_values.iter().enumerate() {
            for (di, &d) in table.d_values.iter().enumerate() {
                let cell = &table.cells[ki][di];
                let (v, p) = cell.metric(metric);
                if cell.stable {
                    writeln!(w, "{},{k},{d},{v},{p}", table.variant)?;
                } else {
                    writeln!(w, "{},{k},{d},†,†", table.variant)?;
                }
            }
        }
    }
    Ok(())
}

/// Sweep settings: which orders to measure and how to sample the domain.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub d_values: Vec<usize>,
    pub k_values: Vec<usize>,
    /// Vary only the RPE scale (the choroid scale is pinned to the domain
    /// center) in snapshots and in the evaluation set.
    pub one_param: bool,
    pub domain: AlphaDomain,
    pub scan: ScanConfig,
    /// Evaluation grid over the domain: rows x columns in the two-parameter
    /// study; `rows` points on the line in the one-parameter study.
    pub scan_grid: (usize, usize),
    pub irka: IrkaOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            d_values: (5..=8).collect(),
            k_values: vec![3],
            one_param: false,
            domain: AlphaDomain::default(),
            scan: ScanConfig::default(),
            scan_grid: (5, 5),
            irka: IrkaOptions::default(),
        }
    }
}

impl SweepConfig {
    fn evaluation_set(&self) -> Vec<AbsorptionScale> {
        if self.one_param {
            self.domain.line_rpe(self.scan_grid.0, self.domain.center().ch)
        } else {
            self.domain.grid(self.scan_grid.0, self.scan_grid.1)
        }
    }
}

/// Outcome of a sweep: one table per variant plus the snapshot spectra of
/// the interpolation stage (taken from the largest measured order).
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub taylor: ErrorTable,
    pub deim: ErrorTable,
    pub alphas: Vec<AbsorptionScale>,
    pub input_singular_values: Vec<f64>,
    pub output_singular_values: Vec<f64>,
    pub v_singular_values: Vec<f64>,
    pub w_singular_values: Vec<f64>,
}

/// Measure both reduction variants over a grid of reduced orders `d` and
/// expansion/interpolation orders `k` against one shared full-order scan.
/// Models that fail to build or are unstable yield dagger cells instead of
/// aborting the sweep.
pub fn mor_sweep(model: &FullOrderModel, cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.d_values.is_empty() || cfg.k_values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs nonempty d and k lists".into()));
    }
    let alphas = cfg.evaluation_set();
    let scan = FullScan::new(model, &alphas, cfg.scan)?;

    let gb_opts = GbDeimOptions {
        d: cfg.d_values[0], // the snapshot basis itself is order-independent
        k: cfg.k_values[0],
        delta: cfg.scan.delta,
        one_param: cfg.one_param,
        domain: cfg.domain,
        basis_params: None,
        snapshot_params: None,
    };
    let snapshot_params = gb_opts.snapshot_parameter_set();
    // One snapshot basis serves the whole sweep; it is cut per order below.
    let basis = GbBasis::compute(model, &gb_opts)?;

    let mut taylor_cells = vec![Vec::with_capacity(cfg.d_values.len()); cfg.k_values.len()];
    let mut deim_cells = vec![Vec::with_capacity(cfg.d_values.len()); cfg.k_values.len()];
    let mut spectra: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = None;

    for &d in &cfg.d_values {
        // One projection per reduced order serves every interpolation rank.
        let proj = basis.projection(d);
        for (ki, &k) in cfg.k_values.iter().enumerate() {
            let taylor_cell = build_taylor_rom(
                model,
                &TaylorOptions {
                    d,
                    order: k as u32,
                    delta: cfg.scan.delta,
                    one_param: cfg.one_param,
                    expansion_point: None,
                    domain: cfg.domain,
                    irka: cfg.irka,
                },
            )
            .and_then(|b| error_scan_against(&scan, &b.rom))
            .unwrap_or_else(|_| ErrorCell::unusable());
            taylor_cells[ki].push(taylor_cell);

            let deim_cell = match &proj {
                Ok(proj) => deim_rom_from_pair(
                    model,
                    proj.pair.clone(),
                    &snapshot_params,
                    k,
                    cfg.scan.delta,
                    RomMetaSeed {
                        basis_params: proj.basis_params.clone(),
                        v_singular_values: proj.v_singular_values.clone(),
                        w_singular_values: proj.w_singular_values.clone(),
                        notes: proj.notes.clone(),
                    },
                )
                .and_then(|rom| {
                    if spectra.is_none() {
                        spectra = Some((
                            rom.meta.input_singular_values.clone(),
                            rom.meta.output_singular_values.clone(),
                            rom.meta.v_singular_values.clone(),
                            rom.meta.w_singular_values.clone(),
                        ));
                    }
                    error_scan_against(&scan, &rom)
                })
                .unwrap_or_else(|_| ErrorCell::unusable()),
                Err(_) => ErrorCell::unusable(),
            };
            deim_cells[ki].push(deim_cell);
        }
    }

    let (input_sv, output_sv, v_sv, w_sv) = spectra.unwrap_or_default();
    Ok(SweepResult {
        taylor: ErrorTable {
            variant: RomVariant::TaylorIrka,
            d_values: cfg.d_values.clone(),
            k_values: cfg.k_values.clone(),
            cells: taylor_cells,
        },
        deim: ErrorTable {
            variant: RomVariant::GlobalBasisDeim,
            d_values: cfg.d_values.clone(),
            k_values: cfg.k_values.clone(),
            cells: deim_cells,
        },
        alphas,
        input_singular_values: input_sv,
        output_singular_values: output_sv,
        v_singular_values: v_sv,
        w_singular_values: w_sv,
    })
}

/// Export the snapshot spectra of a sweep, one row per index, empty fields
/// where a collection is shorter.
pub fn write_singular_values_csv<W: Write>(mut w: W, result: &SweepResult) -> Result<()> {
    writeln!(w, "index,input_snapshots,output_snapshots,trial_stack,test_stack")?;
    let cols = [
        &result.input_singular_values,
        &result.output_singular_values,
        &result.v_singular_values,
        &result.w_singular_values,
    ];
    let rows = cols.iter().map(|c| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        let fields: Vec<String> = cols
            .iter()
            .map(|c| c.get(i).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        writeln!(w, "{},{}", i + 1, fields.join(","))?;
    }
    Ok(())
}
