//! Dense linear-algebra objects behind the dimension-wise form of the
//! dynamics: `L̂ = I − 1 ℓᵀ`, the projector `P = I − (1/N) 1 1ᵀ`, the
//! spectrum of `L̂` and the identity `P L̂ = P`.
//!
//! Matrix construction and products only need ring operations plus
//! division, so they also run on exact rationals.

use std::fmt::Debug;

use nalgebra::{DMatrix, Schur};
use num_traits::{Num, Signed};
use serde::Serialize;

use crate::ensemble::WeightVector;
use crate::error::{CboError, Result};
use crate::scalar::Real;

/// Field-like scalar for matrix construction: floats or `Ratio<i64>`.
pub trait Field: Num + Signed + Copy + PartialOrd + Debug {}

impl<T: Num + Signed + Copy + PartialOrd + Debug> Field for T {}

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Field> DenseMatrix<T> {
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                data.push(f(i, j));
            }
        }
        Self { size, data }
    }

    pub fn identity(size: usize) -> Self {
        Self::from_fn(size, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.check_size(rhs)?;
        let n = self.size;
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                let rhs_row = rhs.row(k);
                for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(rhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self { size: n, data: out })
    }

    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.size {
            return Err(size_err(self.size, v.len()));
        }
        Ok((0..self.size)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    /// `vᵀ M`.
    pub fn left_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.size {
            return Err(size_err(self.size, v.len()));
        }
        Ok((0..self.size)
            .map(|j| (0..self.size).fold(T::zero(), |acc, i| acc + v[i] * self.get(i, j)))
            .collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.size, |i, j| self.get(j, i))
    }

    /// `max_{ij} |A_ij − B_ij|`.
    pub fn max_abs_diff(&self, rhs: &Self) -> Result<T> {
        self.check_size(rhs)?;
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, x| if x > m { x } else { m }))
    }

    fn check_size(&self, rhs: &Self) -> Result<()> {
        if self.size != rhs.size {
            return Err(size_err(self.size, rhs.size));
        }
        Ok(())
    }
}

fn size_err(expected: usize, got: usize) -> CboError {
    CboError::Shape {
        expected: format!("size {expected}"),
        got: format!("size {got}"),
    }
}

/// `L̂ = I_N − 1_N ℓᵀ` for a weight vector `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaplacianHat<T> {
    weights: Vec<T>,
    dense: DenseMatrix<T>,
}

impl<T: Field> LaplacianHat<T> {
    /// Builds `I − 1 ℓᵀ` without checking that `ℓ` lies on the simplex.
    /// Used for exact arithmetic and for negative controls.
    pub fn from_raw_weights(weights: &[T]) -> Self {
        let dense = DenseMatrix::from_fn(weights.len(), |i, j| {
            let id = if i == j { T::one() } else { T::zero() };
            id - weights[j]
        });
        Self {
            weights: weights.to_vec(),
            dense,
        }
    }

    pub fn size(&self) -> usize {
        self.dense.size()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `max_i |Σ_j L̂_ij| = |1 − Σ ℓ|`; zero exactly when `ℓ` sums to one.
    pub fn max_abs_row_sum(&self) -> T {
        (0..self.size())
            .map(|i| {
                self.dense
                    .row(i)
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x)
                    .abs()
            })
            .fold(T::zero(), |m, x| if x > m { x } else { m })
    }

    pub fn dense(&self) -> &DenseMatrix<T> {
        &self.dense
    }
}

pub fn build_l_hat<T: Real>(w: &WeightVector<T>) -> LaplacianHat<T> {
    LaplacianHat::from_raw_weights(w.as_slice())
}

/// `P = I − (1/N) 1 1ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projector<T> {
    dense: DenseMatrix<T>,
}

impl<T: Field> Projector<T> {
    pub fn new(size: usize) -> Self {
        let n = (0..size).fold(T::zero(), |acc, _| acc + T::one());
        let inv = if size == 0 { T::zero() } else { T::one() / n };
        let dense = DenseMatrix::from_fn(size, |i, j| {
            let id = if i == j { T::one() } else { T::zero() };
            id - inv
        });
        Self { dense }
    }

    pub fn size(&self) -> usize {
        self.dense.size()
    }

    pub fn dense(&self) -> &DenseMatrix<T> {
        &self.dense
    }
}

/// `max |P L̂ − P| ≤ tol`.
pub fn verify_projection_identity<T: Field>(
    l: &LaplacianHat<T>,
    proj: &Projector<T>,
    tol: T,
) -> Result<bool> {
    Ok(projection_residual(l, proj)? <= tol)
}

/// `max |P L̂ − P|`.
pub fn projection_residual<T: Field>(l: &LaplacianHat<T>, proj: &Projector<T>) -> Result<T> {
    let pl = proj.dense().mul(l.dense())?;
    pl.max_abs_diff(proj.dense())
}

/// `det(a I + c dᵀ) = a^{N−1} (a + dᵀ c)`.
///
/// Equal to `a^N (1 + dᵀc / a)` for `a ≠ 0`; the factored form also covers
/// `a = 0`, where the rank-one matrix is singular for `N ≥ 2`.
pub fn rank_one_det<T: Field>(a_scale: T, c: &[T], d: &[T]) -> Result<T> {
    if c.len() != d.len() {
        return Err(size_err(c.len(), d.len()));
    }
    if c.is_empty() {
        return Ok(T::one());
    }
    let dot = c.iter().zip(d).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let pow = (1..c.len()).fold(T::one(), |acc, _| acc * a_scale);
    Ok(pow * (a_scale + dot))
}

/// Characteristic polynomial `det(L̂ − μ I)` through [`rank_one_det`].
pub fn l_hat_char_poly<T: Field>(l: &LaplacianHat<T>, mu: T) -> Result<T> {
    let minus_ones = vec![-T::one(); l.size()];
    rank_one_det(T::one() - mu, &minus_ones, l.weights())
}

/// Sample points for the characteristic-polynomial cross-check; each lies
/// at least 0.25 from both eigenvalues 0 and 1.
pub const CHAR_POLY_GRID: [f64; 6] = [-0.5, -0.25, 0.25, 0.5, 1.25, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport<T> {
    /// Real parts, ascending.
    pub eigenvalues: Vec<T>,
    pub max_imag: T,
    /// Largest distance to the expected spectrum `(0, 1, …, 1)`.
    pub max_deviation: T,
    /// Largest relative gap between `Π(λ_i − μ)` and the rank-one
    /// determinant formula over [`CHAR_POLY_GRID`].
    pub char_poly_residual: T,
    pub pass: bool,
}

/// Numerical eigenvalues of `L̂` checked against `{0, 1^{N−1}}`.
pub fn verify_spectrum<T: Real>(l: &LaplacianHat<T>, tol: T) -> Result<SpectrumReport<T>> {
    let n = l.size();
    if n == 0 {
        return Err(size_err(1, 0));
    }
    let m = DMatrix::from_fn(n, n, |i, j| l.dense().get(i, j).as_f64());
    let max_niter = 200 * n.max(10);
    // A deflation threshold of exactly ε stalls on the (N−1)-fold eigenvalue.
    let schur =
        Schur::try_new(m, 4.0 * f64::EPSILON, max_niter).ok_or(CboError::EigenNonConvergence {
            residual: f64::INFINITY,
        })?;
    let mut eig: Vec<(f64, f64)> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    eig.sort_by(|a, b| a.0.total_cmp(&b.0));

    let max_imag = eig.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let max_deviation = eig
        .iter()
        .enumerate()
        .map(|(i, e)| (e.0 - if i == 0 { 0.0 } else { 1.0 }).abs())
        .fold(0.0, f64::max);

    let mut char_poly_residual = 0.0f64;
    for &mu in &CHAR_POLY_GRID {
        let from_eigs: f64 = eig.iter().map(|e| e.0 - mu).product();
        let formula = l_hat_char_poly(l, T::lit(mu))?.as_f64();
        let scale = formula.abs().max(f64::MIN_POSITIVE);
        char_poly_residual = char_poly_residual.max((from_eigs - formula).abs() / scale);
    }

    let tol64 = tol.as_f64();
    // Eigenvalue errors δ_i move Π(λ_i − μ) by about Σ δ_i / |λ_i − μ|.
    let char_poly_tol = 8.0 * n as f64 * tol64;
    let pass = max_imag <= tol64 && max_deviation <= tol64 && char_poly_residual <= char_poly_tol;
    Ok(SpectrumReport {
        eigenvalues: eig.iter().map(|e| T::lit(e.0)).collect(),
        max_imag: T::lit(max_imag),
        max_deviation: T::lit(max_deviation),
        char_poly_residual: T::lit(char_poly_residual),
        pass,
    })
}
