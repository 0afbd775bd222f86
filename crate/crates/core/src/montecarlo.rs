//! Replicated runs averaging `V(t)` and one-parameter sweeps.
//!
//! Seed policy: replicate `r` of a plain run uses
//! `NoiseSource::new(seed, r)`; value `i` of a sweep replaces `seed` by
//! `derive_seed(seed, &[i])`. Replicates run in parallel on the ambient
//! rayon pool and are reduced in replicate order, so the output does not
//! depend on the worker count.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{default_burn_in, fit_decay_rate};
use crate::dynamics::{simulate, CboParams, Trajectory};
use crate::ensemble::ParticleEnsemble;
use crate::error::{param_err, CboError, Result};
use crate::noise::{derive_seed, NoiseSource};
use crate::objective::{ObjectiveHandle, ObjectiveRegistry};
use crate::scalar::Real;

/// Pointwise cap applied to each run's `V` series before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ClipPolicy<T> {
    Off,
    Absolute(T),
    /// Multiple of the run's own initial `V`.
    InitialMultiple(T),
}

impl<T: Real> ClipPolicy<T> {
    pub const DEFAULT_MULTIPLE: f64 = 10.0;

    fn threshold(&self, v0: T) -> Option<T> {
        match *self {
            ClipPolicy::Off => None,
            ClipPolicy::Absolute(c) => Some(c),
            ClipPolicy::InitialMultiple(k) => Some(k * v0),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ClipPolicy::Off => Ok(()),
            ClipPolicy::Absolute(c) | ClipPolicy::InitialMultiple(c) if c > T::zero() => Ok(()),
            _ => Err(CboError::Config("clip threshold must be positive".into())),
        }
    }
}

impl<T: Real> Default for ClipPolicy<T> {
    fn default() -> Self {
        ClipPolicy::InitialMultiple(T::lit(Self::DEFAULT_MULTIPLE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfig<T> {
    pub base: CboParams<T>,
    pub objective: String,
    pub n_particles: usize,
    pub dim: usize,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub init_low: T,
    pub init_high: T,
    pub clip: ClipPolicy<T>,
}

impl<T: Real> McConfig<T> {
    /// Base experimental setting: `N = 100`, `D = 2`, 100 steps, 1000 runs,
    /// Rastrigin, initial positions `U([−5, 5]^D)`.
    pub fn base(params: CboParams<T>) -> Self {
        Self {
            base: params,
            objective: "rastrigin".into(),
            n_particles: 100,
            dim: 2,
            steps: 100,
            runs: 1000,
            seed: 42,
            init_low: T::lit(-5.0),
            init_high: T::lit(5.0),
            clip: ClipPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(CboError::Config("runs must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(CboError::Config("steps must be at least 1".into()));
        }
        if self.n_particles == 0 || self.dim == 0 {
            return Err(CboError::Config(
                "n_particles and dim must be at least 1".into(),
            ));
        }
        if !(self.init_low < self.init_high)
            || !self.init_low.is_finite()
            || !self.init_high.is_finite()
        {
            return Err(CboError::Config(format!(
                "init box [{}, {}] is empty",
                self.init_low, self.init_high
            )));
        }
        self.clip.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult<T> {
    pub times: Vec<T>,
    pub mean_v: Vec<T>,
    pub stderr_v: Vec<T>,
    pub diverged_count: usize,
    /// Fitted slope of `ln V` per run; `None` for diverged or unfit runs.
    pub per_run_final_rates: Vec<Option<T>>,
    pub clip: ClipPolicy<T>,
}

/// Draws `U([low, high]^D)` positions for `n` agents.
pub fn uniform_ensemble<T: Real, R: Rng>(
    rng: &mut R,
    n: usize,
    dim: usize,
    low: T,
    high: T,
) -> Result<ParticleEnsemble<T>> {
    let (lo, hi) = (low.as_f64(), high.as_f64());
    let data = (0..n * dim)
        .map(|_| T::lit(rng.random_range(lo..hi)))
        .collect();
    ParticleEnsemble::from_rows(n, dim, data)
}

/// Initial ensemble of replicate `run`. Deterministic runs share one draw,
/// since the initial condition is their only source of randomness.
pub fn initial_ensemble<T: Real>(cfg: &McConfig<T>, run: u64) -> Result<ParticleEnsemble<T>> {
    let stream = if cfg.base.mode().is_stochastic() {
        run
    } else {
        0
    };
    let mut rng = NoiseSource::new(cfg.seed, stream).init_rng();
    uniform_ensemble(
        &mut rng,
        cfg.n_particles,
        cfg.dim,
        cfg.init_low,
        cfg.init_high,
    )
}

/// One replicate: simulation with `NoiseSource::new(cfg.seed, run)`.
pub fn run_replicate<T: Real>(
    cfg: &McConfig<T>,
    f: &ObjectiveHandle<T>,
    run: u64,
) -> Result<Trajectory<T>> {
    let init = initial_ensemble(cfg, run)?;
    let mut noise = NoiseSource::new(cfg.seed, run);
    simulate(&init, &cfg.base, f, cfg.steps, &mut noise, 0)
}

pub fn run_mc<T: Real>(cfg: &McConfig<T>) -> Result<McResult<T>> {
    run_mc_with(cfg, &ObjectiveRegistry::with_builtins())
}

pub fn run_mc_with<T: Real>(
    cfg: &McConfig<T>,
    registry: &ObjectiveRegistry<T>,
) -> Result<McResult<T>> {
    cfg.validate()?;
    let f = registry.resolve(&cfg.objective, cfg.dim)?;
    let replicates = if cfg.base.mode().is_stochastic() {
        cfg.runs
    } else {
        1
    };
    let runs: Vec<Trajectory<T>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &f, r))
        .collect::<Result<_>>()?;
    Ok(aggregate(cfg, &runs))
}

fn aggregate<T: Real>(cfg: &McConfig<T>, runs: &[Trajectory<T>]) -> McResult<T> {
    let len = cfg.steps + 1;
    let times: Vec<T> = (0..len).map(|k| T::from_count(k) * cfg.base.dt()).collect();
    let burn_in = default_burn_in(cfg.base.mode(), cfg.steps);

    let mut clipped: Vec<Vec<T>> = Vec::with_capacity(runs.len());
    let mut rates = Vec::with_capacity(runs.len());
    let mut diverged_count = 0;
    for traj in runs {
        let v = &traj.diagnostics.v_series;
        let threshold = cfg.clip.threshold(v[0]);
        let series: Vec<T> = (0..len)
            .map(|k| {
                let raw = v.get(k).copied().unwrap_or(T::infinity());
                threshold.map_or(raw, |c| raw.min(c))
            })
            .collect();
        clipped.push(series);
        if traj.diverged.is_some() {
            diverged_count += 1;
            rates.push(None);
        } else {
            rates.push(
                fit_decay_rate(&traj.times, v, burn_in)
                    .ok()
                    .map(|fit| fit.slope),
            );
        }
    }

    // Deterministic mode simulates once; every replicate is identical.
    let copies = cfg.runs / runs.len();
    let rates: Vec<Option<T>> = rates
        .iter()
        .flat_map(|r| std::iter::repeat_n(*r, copies))
        .collect();
    let diverged_count = diverged_count * copies;

    let r = T::from_count(runs.len());
    let mut mean_v = Vec::with_capacity(len);
    let mut stderr_v = Vec::with_capacity(len);
    for k in 0..len {
        // Deviations from the first run keep a set of identical runs exact.
        let reference = clipped[0][k];
        let mut sum = T::zero();
        let mut sum_sq = T::zero();
        for s in &clipped {
            let dev = s[k] - reference;
            sum = sum + dev;
            sum_sq = sum_sq + dev * dev;
        }
        let mean_dev = sum / r;
        mean_v.push(reference + mean_dev);
        let se = if runs.len() > 1 {
            let var = ((sum_sq - sum * mean_dev) / (r - T::one())).max(T::zero());
            (var / r).sqrt()
        } else {
            T::zero()
        };
        stderr_v.push(se);
    }

    McResult {
        times,
        mean_v,
        stderr_v,
        diverged_count,
        per_run_final_rates: rates,
        clip: cfg.clip,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    NParticles,
    Dim,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::NParticles => "n",
            SweepParam::Dim => "dim",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = CboError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "n" | "n_particles" => Ok(SweepParam::NParticles),
            "dim" => Ok(SweepParam::Dim),
            other => Err(param_err(
                "param",
                format!("unknown sweep parameter `{other}`"),
            )),
        }
    }
}

/// Inclusive grid `from, from + step, …, <= to`.
pub fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !from.is_finite() || !to.is_finite() || !step.is_finite() || step <= 0.0 || to < from {
        return Err(CboError::Config(format!(
            "empty grid: from {from} to {to} step {step}"
        )));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| from + i as f64 * step).collect())
}

fn apply_value<T: Real>(cfg: &McConfig<T>, param: SweepParam, value: f64) -> Result<McConfig<T>> {
    let as_count = |name: &str| -> Result<usize> {
        if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
            Ok(value as usize)
        } else {
            Err(CboError::Config(format!(
                "invalid {name} value {value}: must be a positive integer"
            )))
        }
    };
    let mut out = cfg.clone();
    match param {
        SweepParam::Alpha => {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CboError::Config(format!(
                    "invalid alpha value {value}: must be positive"
                )));
            }
            out.base = cfg.base.with_alpha(T::lit(value))?;
        }
        SweepParam::NParticles => out.n_particles = as_count("n")?,
        SweepParam::Dim => out.dim = as_count("dim")?,
    }
    Ok(out)
}

/// Runs [`run_mc`] once per grid value, value `i` seeded with
/// `derive_seed(cfg.seed, &[i])`.
pub fn sweep<T: Real>(
    cfg: &McConfig<T>,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, McResult<T>)>> {
    sweep_with(cfg, param, values, &ObjectiveRegistry::with_builtins())
}

pub fn sweep_with<T: Real>(
    cfg: &McConfig<T>,
    param: SweepParam,
    values: &[f64],
    registry: &ObjectiveRegistry<T>,
) -> Result<Vec<(f64, McResult<T>)>> {
    if values.is_empty() {
        return Err(CboError::Config("sweep grid is empty".into()));
    }
    let configs: Vec<McConfig<T>> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = apply_value(cfg, param, v)?;
            c.seed = derive_seed(cfg.seed, &[i as u64]);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    values
        .iter()
        .zip(&configs)
        .map(|(&v, c)| Ok((v, run_mc_with(c, registry)?)))
        .collect()
}
