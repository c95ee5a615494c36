//! Small linear-algebra toolkit: band matrices with an LU factorization that
//! supports real and complex scalars, plus dense eigenvector helpers.
//!
//! The spatial discretization produces a penta-diagonal-block operator whose
//! bandwidth equals the number of interior radial nodes, so an LAPACK-style
//! band LU (partial pivoting, factorization reuse for repeated solves and
//! transposed solves) covers every sparse solve in the crate: the implicit
//! Euler stepper, DC-gain solves, and the complex shifted systems used by
//! interpolatory model reduction.

mod banded;
mod eig;

pub use banded::{Banded, BandedLu};
pub use eig::{complex_eigen_pairs, EigenPairs};

use num_complex::Complex64;

/// Scalar field accepted by the band factorization.
///
/// Implemented for `f64` and `Complex64`; `modulus` drives pivot selection.
pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn modulus(self) -> f64;
    fn from_real(x: f64) -> Self;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn modulus(self) -> f64 {
        self.abs()
    }

    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    const ONE: Self = Complex64::new(1.0, 0.0);

    #[inline]
    fn modulus(self) -> f64 {
        // |re| + |im| is the usual pivoting surrogate for the true modulus;
        // it avoids a sqrt per candidate and is equivalent up to sqrt(2).
        self.re.abs() + self.im.abs()
    }

    #[inline]
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
}
