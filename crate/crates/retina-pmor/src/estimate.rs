//! Least-squares identification of the absorption scales from volume
//! temperature measurements.
//!
//! With zero initial temperature difference, the residual of a measurement
//! set `y^m` under parameters `alpha` is `F_k = y^m_k - C_vol(alpha) x_k`,
//! where the states follow the implicit-Euler recursion driven by the
//! recorded inputs. The exact Jacobian comes from the sensitivity recursion
//! `s_{k+1} = (I - d A_c)^{-1} (s_k + d (dB/dalpha_j) u_k)` run alongside the
//! states, plus the output-operator derivative applied to `x_k`; both pieces
//! have closed forms. A Levenberg-Marquardt iteration with gain-ratio
//! damping minimizes `||F||^2`, and `(J^T J)^{-1}` at the solution provides
//! the covariance behind the chi-square confidence intervals.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{AbsorptionScale, Deriv, FullOrderModel};
use crate::simulate::Stepper;

/// Recorded excitation and measured volume temperatures at a fixed rate.
/// Sample `k` of `y_meas` belongs to the state at time `k * delta`, so the
/// first sample observes the (zero) initial condition; input `u[k]` acts on
/// the interval `[k delta, (k+1) delta)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub delta: f64,
    pub u: Vec<f64>,
    pub y_meas: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(delta: f64, u: Vec<f64>, y_meas: Vec<f64>) -> Result<Self> {
        if u.len() != y_meas.len() {
            return Err(Error::Dimension(format!(
                "input and measurement lengths differ: {} vs {}",
                u.len(),
                y_meas.len()
            )));
        }
        if u.len() < 2 {
            return Err(Error::InvalidConfig(
                "a measurement set needs at least 2 samples".into(),
            ));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidConfig(format!("sample period {delta} invalid")));
        }
        Ok(MeasurementSet { delta, u, y_meas })
    }

    pub fn len(&self) -> usize {
        self.y_meas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_meas.is_empty()
    }

    /// Prefix of the first `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::Dimension(format!(
                "horizon {n} exceeds data length {}",
                self.len()
            )));
        }
        MeasurementSet::new(self.delta, self.u[..n].to_vec(), self.y_meas[..n].to_vec())
    }

    /// CSV export with columns `t,u,y_meas`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u,y_meas")?;
        for k in 0..self.len() {
            writeln!(w, "{},{},{}", k as f64 * self.delta, self.u[k], self.y_meas[k])?;
        }
        Ok(())
    }

    /// Parse the CSV format written by [`MeasurementSet::write_csv`]. The
    /// sample period is inferred from the first two time stamps.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut t = Vec::new();
        let mut u = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('t')) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::ConfigParse(format!(
                    "measurement CSV line {} has {} columns, expected 3",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::ConfigParse(format!("measurement CSV line {}: {e}", lineno + 1))
                })
            };
            t.push(parse(cols[0])?);
            u.push(parse(cols[1])?);
            y.push(parse(cols[2])?);
        }
        if t.len() < 2 {
            return Err(Error::ConfigParse("measurement CSV has fewer than 2 rows".into()));
        }
        MeasurementSet::new(t[1] - t[0], u, y)
    }
}

/// Which parameters the fit adjusts. In [`FitMode::RpeOnly`] the choroid
/// scale stays at the value carried by the start point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    TwoParam,
    RpeOnly,
}

impl FitMode {
    pub fn free_parameters(self) -> usize {
        match self {
            FitMode::TwoParam => 2,
            FitMode::RpeOnly => 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub max_iters: usize,
    /// First-order optimality: stop when `||J^T F||_inf <= gtol * max(1, ||F||)`.
    pub gtol: f64,
    /// Stop when the proposed step is below this size.
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 100,
            gtol: 1e-8,
            step_tol: 1e-10,
        }
    }
}

/// Outcome of a Levenberg-Marquardt fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimationResult {
    pub alpha: AbsorptionScale,
    /// `||F(alpha*)||_2`.
    pub resnorm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(J^T J)^{-1}` over the free parameters, at the solution.
    pub cov: DMatrix<f64>,
    pub mode: FitMode,
}

/// Residual and (optionally) the exact Jacobian over the free parameters.
pub fn residual_jacobian(
    model: &FullOrderModel,
    alpha: &AbsorptionScale,
    data: &MeasurementSet,
    mode: FitMode,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (f, j) = evaluate(model, alpha, data, mode, true)?;
    Ok((f, j.expect("jacobian requested")))
}

fn evaluate(
    model: &FullOrderModel,
    alpha: &AbsorptionScale,
    data: &MeasurementSet,
    mode: FitMode,
    with_jacobian: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let n_meas = data.len();
    let q = mode.free_parameters();
    let stepper = Stepper::new(model, data.delta)?;
    let b = model.input_vector(alpha, Deriv::None);
    let c = model.output_vol(alpha, Deriv::None);
    let derivs: &[Deriv] = match mode {
        FitMode::TwoParam => &[Deriv::Rpe, Deriv::Ch],
        FitMode::RpeOnly => &[Deriv::Rpe],
    };
    let db: Vec<DVector<f64>> = derivs.iter().map(|&d| model.input_vector(alpha, d)).collect();
    let dc: Vec<DVector<f64>> = derivs.iter().map(|&d| model.output_vol(alpha, d)).collect();

    let n = model.n();
    let mut x = DVector::zeros(n);
    let mut sens: Vec<DVector<f64>> = (0..q).map(|_| DVector::zeros(n)).collect();
    let mut f = DVector::zeros(n_meas);
    let mut jac = with_jacobian.then(|| DMatrix::zeros(n_meas, q));

    for k in 0..n_meas {
        f[k] = data.y_meas[k] - c.dot(&x);
        if let Some(jm) = jac.as_mut() {
            for (col, s) in sens.iter().enumerate() {
                jm[(k, col)] = -(dc[col].dot(&x) + c.dot(s));
            }
        }
        if k + 1 < n_meas {
            let u = data.u[k];
            if with_jacobian {
                for (col, s) in sens.iter_mut().enumerate() {
                    stepper.step_in_place(s, &db[col], u);
                }
            }
            stepper.step_in_place(&mut x, &b, u);
        }
    }
    Ok((f, jac))
}

fn project(alpha: AbsorptionScale, mode: FitMode) -> AbsorptionScale {
    const FLOOR: f64 = 1e-6;
    match mode {
        FitMode::TwoParam => AbsorptionScale::new(alpha.rpe.max(FLOOR), alpha.ch.max(FLOOR)),
        FitMode::RpeOnly => AbsorptionScale::new(alpha.rpe.max(FLOOR), alpha.ch),
    }
}

fn update(alpha: &AbsorptionScale, step: &DVector<f64>, mode: FitMode) -> AbsorptionScale {
    let next = match mode {
        FitMode::TwoParam => AbsorptionScale::new(alpha.rpe + step[0], alpha.ch + step[1]),
        FitMode::RpeOnly => AbsorptionScale::new(alpha.rpe + step[0], alpha.ch),
    };
    project(next, mode)
}

/// Levenberg-Marquardt minimization of `||F(alpha)||^2` with the analytic
/// Jacobian and gain-ratio damping. The damping uses Marquardt's diagonal
/// scaling, `(J^T J + lambda diag(J^T J))`, which makes the step geometry
/// invariant to the very different magnitudes of the two absorption scales;
/// with a plain `lambda I` the first damped steps slide into a spurious
/// low-RPE/high-choroid compensation valley. Non-convergence within the
/// iteration budget comes back with `converged == false`; an ill-conditioned
/// normal matrix at the solution (condition beyond 1e14) is an error because
/// the covariance would be meaningless.
pub fn fit(
    model: &FullOrderModel,
    data: &MeasurementSet,
    alpha0: &AbsorptionScale,
    mode: FitMode,
    options: &FitOptions,
) -> Result<EstimationResult> {
    let q = mode.free_parameters();
    let mut alpha = project(*alpha0, mode);
    let (mut f, j0) = evaluate(model, &alpha, data, mode, true)?;
    let mut jac = j0.expect("jacobian requested");

    let mut normal = jac.transpose() * &jac;
    let mut grad = jac.transpose() * &f;
    // Dimensionless damping factor relative to the diagonal scaling. The
    // conservative start (scaled gradient descent) anneals toward
    // Gauss-Newton as steps succeed; aggressive starts can hop across the
    // valley structure of the residual landscape into spurious basins.
    let mut lambda = 1.0;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..options.max_iters {
        iterations = it;
        if grad.amax() <= options.gtol * f.norm().max(1.0) {
            converged = true;
            break;
        }
        // Damped, diagonally scaled normal equations.
        let mut damped = normal.clone();
        for d in 0..q {
            damped[(d, d)] += lambda * normal[(d, d)];
        }
        let step = match damped.clone().lu().solve(&(-&grad)) {
            Some(s) => s,
            None => {
                lambda *= nu;
                nu *= 2.0;
                continue;
            }
        };
        if step.norm() <= options.step_tol * (alpha_vec(&alpha, mode).norm() + options.step_tol) {
            converged = true;
            break;
        }
        let trial = update(&alpha, &step, mode);
        let (f_trial, _) = evaluate(model, &trial, data, mode, false)?;
        // Gain ratio: actual versus predicted decrease of ||F||^2.
        let scaled_step = DVector::from_fn(q, |d, _| lambda * normal[(d, d)] * step[d]);
        let predicted = step.dot(&(scaled_step - &grad));
        let actual = f.norm_squared() - f_trial.norm_squared();
        let rho = actual / predicted.max(f64::MIN_POSITIVE);
        if rho > 0.0 {
            alpha = trial;
            let (f_new, j_new) = evaluate(model, &alpha, data, mode, true)?;
            f = f_new;
            jac = j_new.expect("jacobian requested");
            normal = jac.transpose() * &jac;
            grad = jac.transpose() * &f;
            lambda *= (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
    }

    // Covariance of the free parameters at the solution.
    let cond = condition_spd(&normal);
    if !(cond < 1e14) {
        return Err(Error::Singular(format!(
            "normal matrix J^T J has condition {cond:.3e}; parameters not identifiable"
        )));
    }
    let cov = normal
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("normal matrix J^T J is not invertible".into()))?;

    Ok(EstimationResult {
        alpha,
        resnorm: f.norm(),
        iterations,
        converged,
        cov,
        mode,
    })
}

fn alpha_vec(alpha: &AbsorptionScale, mode: FitMode) -> DVector<f64> {
    match mode {
        FitMode::TwoParam => DVector::from_vec(vec![alpha.rpe, alpha.ch]),
        FitMode::RpeOnly => DVector::from_vec(vec![alpha.rpe]),
    }
}

/// Condition number of a small symmetric positive semidefinite matrix.
fn condition_spd(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.amax();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Chi-square quantile at level `p` with `q` degrees of freedom.
pub fn chi2_quantile(p: f64, q: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must be in (0, 1), got {p}"
        )));
    }
    let dist = ChiSquared::new(q as f64)
        .map_err(|e| Error::InvalidConfig(format!("chi-square dof {q}: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

/// Per-parameter confidence intervals
/// `[alpha_i - sqrt(gamma(p) Cov_ii), alpha_i + sqrt(gamma(p) Cov_ii)]`,
/// ordered (rpe, ch) in two-parameter mode, (rpe) in rpe-only mode.
pub fn confidence_intervals(result: &EstimationResult, p: f64) -> Result<Vec<(f64, f64)>> {
    let gamma = chi2_quantile(p, result.mode.free_parameters())?;
    let centers = alpha_vec(&result.alpha, result.mode);
    Ok((0..result.mode.free_parameters())
        .map(|i| {
            let half = (gamma * result.cov[(i, i)]).sqrt();
            (centers[i] - half, centers[i] + half)
        })
        .collect())
}

/// Cohort statistics over per-spot fits.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CohortStats {
    pub mean: AbsorptionScale,
    pub std: AbsorptionScale,
    /// Coefficient of variation per parameter, `std / mean`.
    pub cv: AbsorptionScale,
}

pub fn cohort_stats(fits: &[AbsorptionScale]) -> Result<CohortStats> {
    if fits.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "cohort statistics need at least 2 fits, got {}",
            fits.len()
        )));
    }
    let n = fits.len() as f64;
    let mean_rpe = fits.iter().map(|a| a.rpe).sum::<f64>() / n;
    let mean_ch = fits.iter().map(|a| a.ch).sum::<f64>() / n;
    let var = |sel: fn(&AbsorptionScale) -> f64, mean: f64| {
        fits.iter().map(|a| (sel(a) - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    let std_rpe = var(|a| a.rpe, mean_rpe).sqrt();
    let std_ch = var(|a| a.ch, mean_ch).sqrt();
    Ok(CohortStats {
        mean: AbsorptionScale::new(mean_rpe, mean_ch),
        std: AbsorptionScale::new(std_rpe, std_ch),
        cv: AbsorptionScale::new(std_rpe / mean_rpe, std_ch / mean_ch),
    })
}

/// Simulate a measurement campaign: the clean volume output under `u_seq`
/// plus i.i.d. Gaussian noise, reproducible from the seed.
pub fn synth_measurements(
    model: &FullOrderModel,
    alpha_true: &AbsorptionScale,
    u_seq: &[f64],
    delta: f64,
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if noise_std < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise standard deviation must be >= 0, got {noise_std}"
        )));
    }
    let stepper = Stepper::new(model, delta)?;
    let traj = stepper.simulate(alpha_true, u_seq, None, false)?;
    let mut y: Vec<f64> = traj.y_vol[..u_seq.len()].to_vec();
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
        for v in &mut y {
            *v += normal.sample(&mut rng);
        }
    }
    MeasurementSet::new(delta, u_seq.to_vec(), y)
}

/// One horizon of [`horizon_study`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HorizonPoint {
    pub horizon: usize,
    pub alpha: Option<AbsorptionScale>,
    /// `|alpha*(N) - alpha*(N_full)| / |alpha*(N_full)|`, free parameters
    /// only, ordered (rpe, ch).
    pub rel_err: Vec<f64>,
    pub error: Option<String>,
}

/// Fit on truncated prefixes of the data and compare each solution against
/// the full-horizon fit. Failures are recorded per horizon, not raised.
pub fn horizon_study(
    model: &FullOrderModel,
    data: &MeasurementSet,
    horizons: &[usize],
    alpha0: &AbsorptionScale,
    mode: FitMode,
    options: &FitOptions,
) -> Result<Vec<HorizonPoint>> {
    let full = fit(model, data, alpha0, mode, options)?;
    let reference = alpha_vec(&full.alpha, mode);
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let point = data
            .truncated(h)
            .and_then(|trunc| fit(model, &trunc, alpha0, mode, options));
        match point {
            Ok(res) => {
                let a = alpha_vec(&res.alpha, mode);
                let rel: Vec<f64> = (0..a.len())
                    .map(|i| (a[i] - reference[i]).abs() / reference[i].abs())
                    .collect();
                out.push(HorizonPoint {
                    horizon: h,
                    alpha: Some(res.alpha),
                    rel_err: rel,
                    error: None,
                });
            }
            Err(e) => out.push(HorizonPoint {
                horizon: h,
                alpha: None,
                rel_err: Vec::new(),
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}
