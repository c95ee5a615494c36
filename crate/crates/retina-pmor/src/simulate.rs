//! Implicit-Euler time integration, steady states, and DC gains.
//!
//! Discretizing `x' = A_c x + B(alpha) u` with step `delta` gives the
//! recursion `x_{k+1} = (I - delta A_c)^{-1} (x_k + delta B(alpha) u_k)`.
//! The shifted operator is factorized once per step size and reused for
//! every step and every parameter value, since only the source term depends
//! on `alpha`.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::BandedLu;
use crate::model::{AbsorptionScale, Deriv, FullOrderModel};

/// Reusable implicit-Euler stepper: holds the factorization of
/// `I - delta A_c`.
pub struct Stepper<'m> {
    model: &'m FullOrderModel,
    delta: f64,
    lu: BandedLu<f64>,
}

impl<'m> Stepper<'m> {
    /// Factorize `I - delta A_c`. On moderate problem sizes (n <= 5000) the
    /// factorization is immediately exercised against a pseudo-random right
    /// hand side and must reproduce it through a multiply to 1e-10 relative.
    pub fn new(model: &'m FullOrderModel, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {delta}"
            )));
        }
        let shifted = model.a_c().identity_minus_scaled(delta);
        let lu = shifted.lu()?;
        if model.n() <= 5000 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
            let b: Vec<f64> = (0..model.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = lu.solve(&b);
            let back = shifted.mul_vec(&x);
            let err: f64 = b
                .iter()
                .zip(&back)
                .map(|(bi, ri)| (bi - ri) * (bi - ri))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if err > 1e-10 * norm {
                return Err(Error::Numerical(format!(
                    "implicit-Euler factorization residual {err:.3e} exceeds 1e-10 * {norm:.3e}"
                )));
            }
        }
        Ok(Stepper { model, delta, lu })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn model(&self) -> &FullOrderModel {
        self.model
    }

    /// Solve `(I - delta A_c) y = v` (one discrete-time application).
    pub fn solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.lu.solve(v.as_slice()))
    }

    /// Advance `x` by one step under input value `u` with source direction
    /// `source` (usually `B(alpha)`): `x <- (I - dA)^{-1}(x + d u source)`.
    pub fn step_in_place(&self, x: &mut DVector<f64>, source: &DVector<f64>, u: f64) {
        x.axpy(self.delta * u, source, 1.0);
        self.lu.solve_in_place(x.as_mut_slice());
    }

    /// Run the recursion over an input sequence. Outputs are sampled at
    /// every index `k = 0..=N` (so `y[0]` belongs to `x0`); states are kept
    /// only when `store_states` is set.
    pub fn simulate(
        &self,
        alpha: &AbsorptionScale,
        u_seq: &[f64],
        x0: Option<&DVector<f64>>,
        store_states: bool,
    ) -> Result<Trajectory> {
        let n = self.model.n();
        if let Some(x0) = x0 {
            if x0.len() != n {
                return Err(Error::Dimension(format!(
                    "initial state has {} entries, model has {n}",
                    x0.len()
                )));
            }
        }
        if u_seq.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidConfig("non-finite input sequence".into()));
        }
        let source = self.model.input_vector(alpha, Deriv::None);
        let c_vol = self.model.output_vol(alpha, Deriv::None);
        let peak = self.model.peak_index();

        let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
        let steps = u_seq.len();
        let mut y_vol = Vec::with_capacity(steps + 1);
        let mut y_peak = Vec::with_capacity(steps + 1);
        let mut states = store_states.then(|| Vec::with_capacity(steps + 1));
        y_vol.push(c_vol.dot(&x));
        y_peak.push(x[peak]);
        if let Some(s) = states.as_mut() {
            s.push(x.clone());
        }
        for &u in u_seq {
            self.step_in_place(&mut x, &source, u);
            y_vol.push(c_vol.dot(&x));
            y_peak.push(x[peak]);
            if let Some(s) = states.as_mut() {
                s.push(x.clone());
            }
        }
        if !(y_vol.last().unwrap().is_finite() && y_peak.last().unwrap().is_finite()) {
            return Err(Error::Numerical("simulation produced non-finite outputs".into()));
        }
        Ok(Trajectory {
            delta: self.delta,
            u: u_seq.to_vec(),
            y_vol,
            y_peak,
            states,
            final_state: x,
        })
    }
}

/// Sampled result of a simulation. Output samples include the initial state,
/// so `y_vol` and `y_peak` have one entry more than `u`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub delta: f64,
    pub u: Vec<f64>,
    pub y_vol: Vec<f64>,
    pub y_peak: Vec<f64>,
    pub states: Option<Vec<DVector<f64>>>,
    pub final_state: DVector<f64>,
}

impl Trajectory {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }

    /// Number of output samples (steps + 1).
    pub fn len(&self) -> usize {
        self.y_vol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_vol.is_empty()
    }

    /// Export as CSV with columns `t,u,y_vol,y_peak`, one row per input
    /// sample (the row at `t_k` carries the input applied on
    /// `[t_k, t_{k+1})` and the outputs observed at `t_k`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u,y_vol,y_peak")?;
        for k in 0..self.u.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.time(k),
                self.u[k],
                self.y_vol[k],
                self.y_peak[k]
            )?;
        }
        Ok(())
    }
}

/// Steady state `x = -A_c^{-1} B(alpha) u` for a constant input `u`.
pub fn steady_state(model: &FullOrderModel, alpha: &AbsorptionScale, u: f64) -> DVector<f64> {
    let b = model.input_vector(alpha, Deriv::None);
    let mut x = DVector::from_vec(model.a_c_lu().solve(b.as_slice()));
    x *= -u;
    x
}

/// DC gains `(G_vol, G_peak) = -C_*(alpha) A_c^{-1} B(alpha)`, the
/// steady-state output amplification per watt of constant input.
pub fn dc_gain(model: &FullOrderModel, alpha: &AbsorptionScale) -> (f64, f64) {
    let x = steady_state(model, alpha, 1.0);
    let g_vol = model.output_vol(alpha, Deriv::None).dot(&x);
    let g_peak = x[model.peak_index()];
    (g_vol, g_peak)
}

/// Constant input holding the steady peak temperature at `y_peak_target`.
pub fn steady_state_control(
    model: &FullOrderModel,
    alpha: &AbsorptionScale,
    y_peak_target: f64,
) -> Result<f64> {
    let (_, g_peak) = dc_gain(model, alpha);
    if !(g_peak > 0.0) {
        return Err(Error::Numerical(format!(
            "peak DC gain must be positive to invert, got {g_peak}"
        )));
    }
    Ok(y_peak_target / g_peak)
}
