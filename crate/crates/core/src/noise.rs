//! Seeded Gaussian increment streams.
//!
//! A replicate is identified by `(seed, stream_id)`. Each agent of that
//! replicate owns a ChaCha8 stream (`set_stream(agent)`) keyed by
//! `derive_seed(seed, &[stream_id])`, and every step draws `D` increments
//! from it in coordinate order. The draw sequence therefore only depends on
//! `(seed, stream_id, agent, step)`, never on how work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::scalar::Real;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits a root seed along a path of indices:
/// `s ← splitmix64(s ⊕ splitmix64(i))` for each index `i`.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |s, &i| splitmix64(s ^ splitmix64(i)))
}

/// Stream reserved for the initial-condition draw of a replicate.
pub const INIT_STREAM: u64 = u64::MAX;

/// Brownian increment source for one replicate.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream_id: u64,
    agents: Vec<ChaCha8Rng>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            agents: Vec::new(),
        }
    }

    pub fn key(&self) -> NoiseKey {
        NoiseKey {
            seed: self.seed,
            stream_id: self.stream_id,
        }
    }

    fn agent_rng(&self, agent: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.stream_id]));
        rng.set_stream(agent);
        rng
    }

    /// Generator used to draw this replicate's initial ensemble.
    pub fn init_rng(&self) -> ChaCha8Rng {
        self.agent_rng(INIT_STREAM)
    }

    /// Fills `out` (agent-major, length `n * dim`) with `Normal(0, dt)` draws.
    pub fn fill_increments<T: Real>(&mut self, n: usize, dim: usize, dt: T, out: &mut [T]) {
        assert_eq!(out.len(), n * dim, "increment buffer has wrong length");
        while self.agents.len() < n {
            let rng = self.agent_rng(self.agents.len() as u64);
            self.agents.push(rng);
        }
        let scale = dt.sqrt();
        for (rng, row) in self.agents.iter_mut().zip(out.chunks_exact_mut(dim)) {
            for w in row {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * T::lit(z);
            }
        }
    }

    /// Fresh increments `ΔW` for one step.
    pub fn increments<T: Real>(&mut self, n: usize, dim: usize, dt: T) -> Vec<T> {
        let mut out = vec![T::zero(); n * dim];
        self.fill_increments(n, dim, dt, &mut out);
        out
    }
}
