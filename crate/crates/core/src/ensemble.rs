//! Particle-state representation, softmax weights, consensus point and the
//! projection onto the complement of the consensus manifold.
//!
//! Layout is row-major agent-by-coordinate: row `n` holds agent `X^n`,
//! column `d` holds the coordinate slice `X^{:,d}`.

use serde::Serialize;

use crate::error::{param_err, CboError, Result};
use crate::objective::ObjectiveHandle;
use crate::scalar::Real;

/// `N × D` matrix of agent positions at one time instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleEnsemble<T> {
    n_particles: usize,
    dim: usize,
    positions: Vec<T>,
}

impl<T: Real> ParticleEnsemble<T> {
    /// Builds an ensemble from row-major data of length `n_particles * dim`.
    pub fn from_rows(n_particles: usize, dim: usize, positions: Vec<T>) -> Result<Self> {
        if n_particles == 0 {
            return Err(param_err("n_particles", "must be at least 1"));
        }
        if dim == 0 {
            return Err(param_err("dim", "must be at least 1"));
        }
        if positions.len() != n_particles * dim {
            return Err(CboError::Shape {
                expected: format!("{} entries ({n_particles}x{dim})", n_particles * dim),
                got: format!("{} entries", positions.len()),
            });
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(param_err(
                "positions",
                format!("entry ({}, {}) is not finite", i / dim, i % dim),
            ));
        }
        Ok(Self {
            n_particles,
            dim,
            positions,
        })
    }

    /// Builds an ensemble from a slice of agent rows.
    pub fn from_agents<R: AsRef<[T]>>(agents: &[R]) -> Result<Self> {
        let dim = agents.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(agents.len() * dim);
        for (n, row) in agents.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(CboError::Shape {
                    expected: format!("agent {n} of length {dim}"),
                    got: format!("length {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_rows(agents.len(), dim, data)
    }

    /// All `n_particles` agents placed at `point`.
    pub fn at_consensus(n_particles: usize, point: &[T]) -> Result<Self> {
        let data = point
            .iter()
            .copied()
            .cycle()
            .take(n_particles * point.len())
            .collect();
        Self::from_rows(n_particles, point.len(), data)
    }

    /// Wraps data produced by a stepper; finiteness is checked by the caller.
    pub(crate) fn from_raw_unchecked(n_particles: usize, dim: usize, positions: Vec<T>) -> Self {
        debug_assert_eq!(positions.len(), n_particles * dim);
        Self {
            n_particles,
            dim,
            positions,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major position data.
    pub fn as_slice(&self) -> &[T] {
        &self.positions
    }

    pub fn agent(&self, n: usize) -> &[T] {
        &self.positions[n * self.dim..(n + 1) * self.dim]
    }

    pub fn agents(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.positions.chunks_exact(self.dim)
    }

    pub fn get(&self, n: usize, d: usize) -> T {
        self.positions[n * self.dim + d]
    }

    /// Copy of coordinate slice `X^{:,d}`.
    pub fn column(&self, d: usize) -> Vec<T> {
        self.agents().map(|row| row[d]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|x| x.is_finite())
    }

    /// Multiplies every coordinate by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self::from_raw_unchecked(
            self.n_particles,
            self.dim,
            self.positions.iter().map(|&x| x * s).collect(),
        )
    }

    /// Per-coordinate mean, taken relative to agent 0 so that an ensemble
    /// at consensus yields that position exactly.
    pub fn column_means(&self) -> Vec<T> {
        let reference = self.agent(0);
        let n = T::from_count(self.n_particles);
        (0..self.dim)
            .map(|d| {
                let shift: T = self.agents().map(|row| row[d] - reference[d]).sum();
                reference[d] + shift / n
            })
            .collect()
    }
}

/// Softmax weights `(a_1, …, a_N)`, non-negative and summing to one.
///
/// Entries are strictly positive in exact arithmetic; in floating point an
/// entry whose exponent lies beyond the underflow threshold rounds to zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightVector<T>(Vec<T>);

impl<T: Real> WeightVector<T> {
    /// Validates a weight vector against the simplex constraint.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CboError::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = weights
            .iter()
            .position(|w| !w.is_finite() || *w < T::zero())
        {
            return Err(CboError::InvalidWeights(format!(
                "entry {i} is negative or not finite"
            )));
        }
        let sum: T = weights.iter().copied().sum();
        let tol = Self::sum_tolerance(weights.len());
        if (sum - T::one()).abs() > tol {
            return Err(CboError::InvalidWeights(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Equal weights `1/N`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(param_err("n", "must be at least 1"));
        }
        let w = T::one() / T::from_count(n);
        Ok(Self(vec![w; n]))
    }

    /// Allowed deviation of the entry sum from 1: `1e-12` in double precision,
    /// widened to the rounding level for lower precision or very long vectors.
    pub fn sum_tolerance(n: usize) -> T {
        T::lit(1e-12).max(T::epsilon() * T::from_count(4 * n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// Weighted consensus estimate together with the weights that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusState<T> {
    pub point: Vec<T>,
    pub weights: WeightVector<T>,
}

/// Objective values `f(X^n)` for every agent; errors on the first non-finite one.
pub fn evaluate_objective<T: Real>(
    ens: &ParticleEnsemble<T>,
    f: &ObjectiveHandle<T>,
) -> Result<Vec<T>> {
    ens.agents()
        .enumerate()
        .map(|(index, x)| {
            let v = f.evaluate(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CboError::NonFiniteObjective { index })
            }
        })
        .collect()
}

/// Softmax of `-alpha * values`, shifted by the minimum value so the best
/// agent always receives `exp(0)` before normalization.
pub fn softmax_from_values<T: Real>(values: &[T], alpha: T) -> Result<WeightVector<T>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(param_err(
            "alpha",
            format!("must be positive and finite, got {alpha}"),
        ));
    }
    if values.is_empty() {
        return Err(CboError::InvalidWeights("no objective values".into()));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(CboError::NonFiniteObjective { index });
    }
    let min = values.iter().copied().fold(T::infinity(), T::min);
    let mut weights: Vec<T> = values.iter().map(|&v| (-alpha * (v - min)).exp()).collect();
    let total: T = weights.iter().copied().sum();
    for w in &mut weights {
        *w = *w / total;
    }
    Ok(WeightVector(weights))
}

/// Weights `a_m ∝ exp(-alpha f(X^m))`.
pub fn softmax_weights<T: Real>(
    ens: &ParticleEnsemble<T>,
    f: &ObjectiveHandle<T>,
    alpha: T,
) -> Result<WeightVector<T>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(param_err(
            "alpha",
            format!("must be positive and finite, got {alpha}"),
        ));
    }
    let values = evaluate_objective(ens, f)?;
    softmax_from_values(&values, alpha)
}

/// Convex combination `Σ_m w_m X^m`.
///
/// Accumulated as offsets from agent 0, so an ensemble at consensus returns
/// the common position bit for bit.
pub fn consensus_point<T: Real>(
    ens: &ParticleEnsemble<T>,
    w: &WeightVector<T>,
) -> Result<ConsensusState<T>> {
    if w.len() != ens.n_particles() {
        return Err(CboError::Shape {
            expected: format!("{} weights", ens.n_particles()),
            got: format!("{} weights", w.len()),
        });
    }
    let reference = ens.agent(0);
    let mut point = reference.to_vec();
    for (d, p) in point.iter_mut().enumerate() {
        let shift: T = ens
            .agents()
            .zip(w.as_slice())
            .map(|(row, &a)| a * (row[d] - reference[d]))
            .sum();
        *p = *p + shift;
    }
    Ok(ConsensusState {
        point,
        weights: w.clone(),
    })
}

/// `E = P X` column by column, with `P = I - (1/N) 1 1ᵀ`.
pub fn projected_offset<T: Real>(ens: &ParticleEnsemble<T>) -> ParticleEnsemble<T> {
    let means = ens.column_means();
    let data = ens
        .agents()
        .flat_map(|row| row.iter().zip(&means).map(|(&x, &m)| x - m))
        .collect();
    ParticleEnsemble::from_raw_unchecked(ens.n_particles(), ens.dim(), data)
}

/// Squared Frobenius norm of [`projected_offset`]: `Σ_d ‖P X^{:,d}‖²`.
pub fn distance_sq_to_manifold<T: Real>(ens: &ParticleEnsemble<T>) -> T {
    projected_offset(ens)
        .as_slice()
        .iter()
        .map(|&e| e * e)
        .sum()
}
