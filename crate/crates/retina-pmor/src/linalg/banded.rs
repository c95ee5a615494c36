//! Band matrix storage and LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK band convention: entry `(i, j)` of a matrix
//! with `kl` subdiagonals and `ku` superdiagonals is kept at band row
//! `ku + i - j` of column `j`. The factorization widens the band by `kl`
//! extra superdiagonal rows to hold pivoting fill-in, exactly like `dgbtrf`.

use super::Scalar;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Band matrix with `kl` subdiagonals and `ku` superdiagonals.
#[derive(Clone, Debug)]
pub struct Banded<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    /// Column-major band storage, `data[j * ld + (ku + i - j)]` = entry (i, j).
    data: Vec<T>,
}

impl<T: Scalar> Banded<T> {
    /// Zero matrix of dimension `n` with the given bandwidths.
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = kl + ku + 1;
        Banded {
            n,
            kl,
            ku,
            ld,
            data: vec![T::ZERO; n * ld],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    /// Entry (i, j); zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[j * self.ld + (self.ku + i - j)]
        } else {
            T::ZERO
        }
    }

    /// Set entry (i, j). Panics outside the band.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        self.data[j * self.ld + (self.ku + i - j)] = v;
    }

    /// Add `v` to entry (i, j). Panics outside the band.
    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        self.data[j * self.ld + (self.ku + i - j)] += v;
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n, "mul_vec dimension mismatch");
        let mut y = vec![T::ZERO; self.n];
        for j in 0..self.n {
            let xj = x[j];
            let i0 = j.saturating_sub(self.ku);
            let i1 = (j + self.kl).min(self.n - 1);
            let col = &self.data[j * self.ld..];
            for i in i0..=i1 {
                y[i] += col[self.ku + i - j] * xj;
            }
        }
        y
    }

    /// y = Aᵀ x.
    pub fn mul_vec_transpose(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n, "mul_vec_transpose dimension mismatch");
        let mut y = vec![T::ZERO; self.n];
        for j in 0..self.n {
            let i0 = j.saturating_sub(self.ku);
            let i1 = (j + self.kl).min(self.n - 1);
            let col = &self.data[j * self.ld..];
            let mut acc = T::ZERO;
            for i in i0..=i1 {
                acc += col[self.ku + i - j] * x[i];
            }
            y[j] += acc;
        }
        y
    }

    /// Dense copy (test and small-model use only).
    pub fn to_dense(&self) -> DMatrix<T>
    where
        T: nalgebra::Scalar + num_complex::ComplexFloat,
    {
        let mut m = DMatrix::from_element(self.n, self.n, T::ZERO);
        for j in 0..self.n {
            let i0 = j.saturating_sub(self.ku);
            let i1 = (j + self.kl).min(self.n - 1);
            for i in i0..=i1 {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    /// LU factorization with partial pivoting; the receiver is left intact.
    pub fn lu(&self) -> Result<BandedLu<T>> {
        BandedLu::factorize(self)
    }
}

impl Banded<f64> {
    /// B = I - delta * A  (implicit Euler system matrix).
    pub fn identity_minus_scaled(&self, delta: f64) -> Banded<f64> {
        let mut b = Banded::zeros(self.n, self.kl, self.ku);
        for j in 0..self.n {
            let i0 = j.saturating_sub(self.ku);
            let i1 = (j + self.kl).min(self.n - 1);
            for i in i0..=i1 {
                let a = self.get(i, j);
                let v = if i == j { 1.0 - delta * a } else { -delta * a };
                b.set(i, j, v);
            }
        }
        b
    }

    /// B = sigma * I - A for a complex shift (interpolatory reduction solves).
    pub fn complex_shift_minus(&self, sigma: Complex64) -> Banded<Complex64> {
        let mut b = Banded::zeros(self.n, self.kl, self.ku);
        for j in 0..self.n {
            let i0 = j.saturating_sub(self.ku);
            let i1 = (j + self.kl).min(self.n - 1);
            for i in i0..=i1 {
                let a = self.get(i, j);
                let v = if i == j {
                    sigma - Complex64::new(a, 0.0)
                } else {
                    Complex64::new(-a, 0.0)
                };
                b.set(i, j, v);
            }
        }
        b
    }
}

/// Factored form P A = L U in widened band storage; reusable for many
/// right-hand sides and for transposed solves.
#[derive(Clone, Debug)]
pub struct BandedLu<T> {
    n: usize,
    kl: usize,
    /// Upper bandwidth of U after fill-in: original ku + kl.
    kv: usize,
    ld: usize,
    data: Vec<T>,
    ipiv: Vec<usize>,
}

impl<T: Scalar> BandedLu<T> {
    fn factorize(a: &Banded<T>) -> Result<Self> {
        let n = a.n;
        let kl = a.kl;
        let kv = a.kl + a.ku;
        let ld = kv + kl + 1;
        let mut data = vec![T::ZERO; n * ld];
        // Copy the band into the widened layout: (i, j) -> data[j*ld + kv + i - j].
        for j in 0..n {
            let i0 = j.saturating_sub(a.ku);
            let i1 = (j + kl).min(n - 1);
            for i in i0..=i1 {
                data[j * ld + (kv + i - j)] = a.get(i, j);
            }
        }
        let mut ipiv = vec![0usize; n];

        for j in 0..n {
            // Pivot search in column j among rows j..=j+kl.
            let i1 = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = data[j * ld + kv].modulus();
            for i in (j + 1)..=i1 {
                let v = data[j * ld + (kv + i - j)].modulus();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(format!(
                    "band LU: exact zero pivot at column {j} of {n}"
                )));
            }
            ipiv[j] = p;
            let c1 = (j + kv).min(n - 1);
            if p != j {
                // Swap matrix rows j and p across the affected columns.
                for c in j..=c1 {
                    let rj = c * ld + (kv + j - c);
                    let rp = c * ld + (kv + p - c);
                    data.swap(rj, rp);
                }
            }
            // Multipliers and rank-1 band update.
            let piv = data[j * ld + kv];
            for i in (j + 1)..=i1 {
                let idx = j * ld + (kv + i - j);
                data[idx] = data[idx] / piv;
            }
            for c in (j + 1)..=c1 {
                let ujc = data[c * ld + (kv + j - c)];
                if ujc == T::ZERO {
                    continue;
                }
                for i in (j + 1)..=i1 {
                    let m = data[j * ld + (kv + i - j)];
                    data[c * ld + (kv + i - c)] -= m * ujc;
                }
            }
        }

        Ok(BandedLu {
            n,
            kl,
            kv,
            ld,
            data,
            ipiv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let (n, kl, kv, ld) = (self.n, self.kl, self.kv, self.ld);
        // Forward: apply P and L.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj == T::ZERO {
                continue;
            }
            let i1 = (j + kl).min(n - 1);
            for i in (j + 1)..=i1 {
                b[i] -= self.data[j * ld + (kv + i - j)] * bj;
            }
        }
        // Back substitution with U (bandwidth kv).
        for j in (0..n).rev() {
            let xj = b[j] / self.data[j * ld + kv];
            b[j] = xj;
            if xj == T::ZERO {
                continue;
            }
            let i0 = j.saturating_sub(kv);
            for i in i0..j {
                b[i] -= self.data[j * ld + (kv + i - j)] * xj;
            }
        }
    }

    /// Solve Aᵀ x = b in place (no conjugation: plain transpose).
    pub fn solve_transpose_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n, "solve_transpose dimension mismatch");
        let (n, kl, kv, ld) = (self.n, self.kl, self.kv, self.ld);
        // Uᵀ y = b: forward substitution.
        for j in 0..n {
            let i0 = j.saturating_sub(kv);
            let mut acc = b[j];
            for i in i0..j {
                acc -= self.data[j * ld + (kv + i - j)] * b[i];
            }
            b[j] = acc / self.data[j * ld + kv];
        }
        // Lᵀ x = y with interleaved pivots, in reverse order.
        for j in (0..n).rev() {
            let i1 = (j + kl).min(n - 1);
            let mut acc = b[j];
            for i in (j + 1)..=i1 {
                acc -= self.data[j * ld + (kv + i - j)] * b[i];
            }
            b[j] = acc;
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }

    /// Solve returning a fresh vector.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Transposed solve returning a fresh vector.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}
