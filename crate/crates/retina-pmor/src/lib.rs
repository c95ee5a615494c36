//! Thermal modeling, parameter estimation, model order reduction, and
//! predictive control for temperature-controlled retinal laser heating.
//!
//! The crate builds an axisymmetric finite-difference model of heat diffusion
//! in the layered tissue stack at the back of the eye. A laser beam deposits
//! power in the pigmented layers following a Beer-Lambert attenuation law
//! whose strength is set by two patient-specific absorption factors. On top
//! of that full-order model the crate provides:
//!
//! - implicit Euler simulation with reusable factorizations ([`simulate`]),
//! - Levenberg-Marquardt estimation of the absorption factors from volume
//!   temperature readings, with chi-square confidence intervals ([`estimate`]),
//! - closed-form and DC-gain sensitivity analysis ([`sensitivity`]),
//! - two parametric model-order-reduction pipelines: a Taylor expansion of
//!   the parameter-dependent operators combined with interpolatory (IRKA)
//!   projection, and a global-basis method with discrete empirical
//!   interpolation ([`mor`]),
//! - a condensed-QP model predictive controller that tracks a target
//!   temperature while enforcing a hard peak-temperature bound ([`mpc`]).
//!
//! See the `book/` guide at the repository root for worked examples; its
//! code listings compile as doctests in [`guide`].

pub mod error;
pub mod estimate;
pub mod linalg;
pub mod model;
pub mod mor;
pub mod sensitivity;
pub mod simulate;

pub use error::{Error, Result};
