//! Closed-form decay rates, empirical rate estimation from trajectories and
//! the Monte-Carlo estimator of the discrete almost-sure decay rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{CboParams, Mode, Trajectory};
use crate::error::{param_err, CboError, Result};
use crate::noise::derive_seed;
use crate::scalar::Real;

/// Time-indexed record of the distance to the consensus manifold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSeries<T> {
    pub times: Vec<T>,
    /// `V = Σ_d ‖P X^{:,d}‖²`.
    pub v_series: Vec<T>,
    /// `‖E‖ = √V`.
    pub e_norm_series: Vec<T>,
    /// Consensus point per time, one row of length `D` each.
    pub consensus_series: Vec<Vec<T>>,
    /// Smallest objective value over the agents.
    pub best_f_series: Vec<T>,
}

impl<T: Real> DiagnosticSeries<T> {
    pub fn with_capacity(_dim: usize, cap: usize) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            v_series: Vec::with_capacity(cap),
            e_norm_series: Vec::with_capacity(cap),
            consensus_series: Vec::with_capacity(cap),
            best_f_series: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, time: T, v: T, consensus: &[T], best_f: T) {
        self.times.push(time);
        self.v_series.push(v);
        self.e_norm_series.push(v.sqrt());
        self.consensus_series.push(consensus.to_vec());
        self.best_f_series.push(best_f);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Every theoretical rate for one parameter set. Rates undefined in the
/// given regime are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport<T> {
    pub mode: Mode,
    pub lambda: T,
    pub sigma: T,
    pub dt: T,
    pub dim: usize,
    /// `λ`, continuous deterministic rate of `‖E‖`.
    pub det_rate: T,
    /// `λ + σ²/2`, almost-sure rate.
    pub as_rate: T,
    /// `2λ − σ²`, mean-square rate.
    pub ms_rate: T,
    pub ms_condition_ok: bool,
    /// `2λ − σ² − λ²Δ`.
    pub em_ms_rate: T,
    /// `(1 − λΔ)² + σ²Δ`, one-step mean-square factor of the EM scheme.
    pub em_ms_factor: T,
    /// `−ln((1 − λΔ)² + σ²Δ) / Δ`; `None` when the factor is zero.
    pub em_ms_log_rate: Option<T>,
    /// `(2λ − σ²)/λ²`, defined when `2λ > σ²`.
    pub em_step_bound: Option<T>,
    pub em_ms_step_ok: bool,
    /// `λΔ < 1`.
    pub euler_stable: bool,
    /// `−2 ln|1 − λΔ| / Δ`, exact per-step rate of `V` under explicit Euler.
    pub euler_v_rate: Option<T>,
    /// `2λ − Dσ²`, mean-field isotropic reference rate.
    pub isotropic_mf_rate: T,
    pub isotropic_mf_condition_ok: bool,
}

/// Fills a [`RateReport`] from the closed-form expressions.
pub fn theoretical_rates<T: Real>(p: &CboParams<T>, dim: usize) -> RateReport<T> {
    let (lambda, sigma, dt) = (p.lambda(), p.sigma(), p.dt());
    let two = T::lit(2.0);
    let s2 = sigma * sigma;
    let ms_rate = two * lambda - s2;
    let ms_condition_ok = ms_rate > T::zero();
    let one_minus = T::one() - lambda * dt;
    let em_ms_factor = one_minus * one_minus + s2 * dt;
    let em_step_bound =
        (ms_condition_ok && lambda != T::zero()).then(|| ms_rate / (lambda * lambda));
    let iso = two * lambda - T::from_count(dim) * s2;
    RateReport {
        mode: p.mode(),
        lambda,
        sigma,
        dt,
        dim,
        det_rate: lambda,
        as_rate: lambda + s2 / two,
        ms_rate,
        ms_condition_ok,
        em_ms_rate: ms_rate - lambda * lambda * dt,
        em_ms_factor,
        em_ms_log_rate: (em_ms_factor > T::zero()).then(|| -em_ms_factor.ln() / dt),
        em_step_bound,
        em_ms_step_ok: p.em_ms_ok(),
        euler_stable: p.euler_ok(),
        euler_v_rate: (one_minus != T::zero()).then(|| -two * one_minus.abs().ln() / dt),
        isotropic_mf_rate: iso,
        isotropic_mf_condition_ok: iso > T::zero(),
    }
}

/// Result of [`em_as_rate_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsRateEstimate<T> {
    pub estimate: T,
    pub std_error: T,
    /// Smallest `|1 − λΔ + σ√Δ Z|` drawn; the log integrand is singular at 0.
    pub min_abs_argument: T,
    pub samples: usize,
}

pub const MIN_MC_SAMPLES: usize = 10_000;
const SHARD: usize = 1 << 16;

/// Monte-Carlo mean of `−ln|1 − λΔ + σ√Δ Z| / Δ`, `Z ~ Normal(0, 1)`.
///
/// Samples are split into fixed shards, each with its own substream of
/// `seed`; shard sums are reduced in shard order, so the result does not
/// depend on the number of worker threads.
pub fn em_as_rate_mc<T: Real>(
    lambda: T,
    sigma: T,
    dt: T,
    samples: usize,
    seed: u64,
) -> Result<AsRateEstimate<T>> {
    if samples < MIN_MC_SAMPLES {
        return Err(param_err(
            "samples",
            format!("need at least {MIN_MC_SAMPLES}, got {samples}"),
        ));
    }
    if !dt.is_finite() || !(dt > T::zero()) {
        return Err(param_err("dt", "must be finite and > 0"));
    }
    if !lambda.is_finite() || !sigma.is_finite() || sigma < T::zero() {
        return Err(param_err(
            "sigma",
            "lambda and sigma must be finite, sigma >= 0",
        ));
    }
    let base = T::one() - lambda * dt;
    let noise = sigma * dt.sqrt();
    // Deviations are accumulated around the noise-free integrand, which is
    // then exact (zero deviation) for σ = 0.
    let shift = if base == T::zero() {
        T::zero()
    } else {
        -base.abs().ln() / dt
    };
    let shards = samples.div_ceil(SHARD);
    let partial: Vec<(T, T, T)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let count = SHARD.min(samples - s * SHARD);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[s as u64]));
            let (mut sum, mut sum_sq, mut min_arg) = (T::zero(), T::zero(), T::infinity());
            for _ in 0..count {
                let z: f64 = rng.sample(StandardNormal);
                let arg = (base + noise * T::lit(z)).abs();
                min_arg = min_arg.min(arg);
                let dev = -arg.ln() / dt - shift;
                sum = sum + dev;
                sum_sq = sum_sq + dev * dev;
            }
            (sum, sum_sq, min_arg)
        })
        .collect();
    let (sum, sum_sq, min_arg) = partial
        .into_iter()
        .fold((T::zero(), T::zero(), T::infinity()), |acc, x| {
            (acc.0 + x.0, acc.1 + x.1, acc.2.min(x.2))
        });
    let n = T::from_count(samples);
    let mean_dev = sum / n;
    let var = ((sum_sq - sum * mean_dev) / (n - T::one())).max(T::zero());
    Ok(AsRateEstimate {
        estimate: shift + mean_dev,
        std_error: (var / n).sqrt(),
        min_abs_argument: min_arg,
        samples,
    })
}

/// Least-squares fit of `ln(values)` against `times`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit<T> {
    /// Empirical exponential rate; negative for decay.
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Fits `ln v ≈ intercept + slope·t` over the points after `burn_in`.
pub fn fit_decay_rate<T: Real>(times: &[T], values: &[T], burn_in: usize) -> Result<DecayFit<T>> {
    if times.len() != values.len() {
        return Err(CboError::Shape {
            expected: format!("{} values", times.len()),
            got: format!("{}", values.len()),
        });
    }
    if times.len() < burn_in + 3 {
        return Err(param_err(
            "values",
            format!(
                "need at least 3 points after burn-in {burn_in}, have {}",
                times.len().saturating_sub(burn_in)
            ),
        ));
    }
    let (ts, vs) = (&times[burn_in..], &values[burn_in..]);
    if let Some(i) = vs.iter().position(|&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(CboError::NonPositiveValue { index: burn_in + i });
    }
    let ys: Vec<T> = vs.iter().map(|v| v.ln()).collect();
    let n = T::from_count(ts.len());
    // Means taken relative to the first point, so a constant series is exact.
    let t_mean = ts[0] + ts.iter().map(|&t| t - ts[0]).sum::<T>() / n;
    let y_mean = ys[0] + ys.iter().map(|&y| y - ys[0]).sum::<T>() / n;
    let (mut stt, mut sty, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&t, &y) in ts.iter().zip(&ys) {
        let (dt, dy) = (t - t_mean, y - y_mean);
        stt = stt + dt * dt;
        sty = sty + dt * dy;
        syy = syy + dy * dy;
    }
    if stt == T::zero() {
        return Err(param_err("times", "all fitting times coincide"));
    }
    let slope = sty / stt;
    let r_squared = if syy == T::zero() {
        T::one()
    } else {
        (sty * sty) / (stt * syy)
    };
    Ok(DecayFit {
        slope,
        intercept: y_mean - slope * t_mean,
        r_squared,
    })
}

/// Default burn-in: none for deterministic runs, 10% of the steps otherwise.
pub fn default_burn_in(mode: Mode, steps: usize) -> usize {
    if mode.is_stochastic() {
        steps / 10
    } else {
        0
    }
}

/// `(1/T) ln(‖E_T‖ / ‖E_0‖)`, or [`PathwiseRate::Consensus`] when the final
/// offset is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathwiseRate<T> {
    Rate(T),
    Consensus,
}

impl<T: Real> PathwiseRate<T> {
    /// The rate, with `-inf` standing for exact consensus.
    pub fn value(self) -> T {
        match self {
            PathwiseRate::Rate(r) => r,
            PathwiseRate::Consensus => T::neg_infinity(),
        }
    }
}

pub fn pathwise_log_rate<T: Real>(traj: &Trajectory<T>) -> Result<PathwiseRate<T>> {
    let e = &traj.diagnostics.e_norm_series;
    let (Some(&e0), Some(&et)) = (e.first(), e.last()) else {
        return Err(param_err("trajectory", "empty trajectory"));
    };
    if et == T::zero() {
        return Ok(PathwiseRate::Consensus);
    }
    if e0 == et {
        return Ok(PathwiseRate::Rate(T::zero()));
    }
    let t = traj.final_time() - traj.times[0];
    if !(t > T::zero()) {
        return Err(param_err("trajectory", "needs positive time span"));
    }
    Ok(PathwiseRate::Rate((et / e0).ln() / t))
}
