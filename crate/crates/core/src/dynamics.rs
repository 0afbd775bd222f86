//! Time steppers for the three CBO variants and trajectory simulation.
//!
//! All steppers share one update structure. With `ν` the consensus point
//! of the pre-step state,
//!
//! ```text
//! deterministic:  X⁺ⁿ = Xⁿ − λΔ (Xⁿ − ν)
//! anisotropic:    Z⁺ⁿ = Zⁿ − λΔ (Zⁿ − ν) + σ (Zⁿ − ν) ∘ ΔWⁿ
//! isotropic:      Z⁺ⁿ = Zⁿ − λΔ (Zⁿ − ν) + σ ‖Zⁿ − ν‖₂ ΔWⁿ
//! ```
//!
//! with `ΔWⁿ ~ Normal(0, Δ I_D)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticSeries;
use crate::ensemble::{
    consensus_point, distance_sq_to_manifold, evaluate_objective, softmax_from_values,
    ParticleEnsemble,
};
use crate::error::{param_err, CboError, Result};
use crate::noise::NoiseSource;
use crate::objective::ObjectiveHandle;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Deterministic,
    Anisotropic,
    Isotropic,
}

impl Mode {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Mode::Deterministic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Deterministic => "deterministic",
            Mode::Anisotropic => "anisotropic",
            Mode::Isotropic => "isotropic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = CboError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Mode::Deterministic),
            "anisotropic" => Ok(Mode::Anisotropic),
            "isotropic" => Ok(Mode::Isotropic),
            other => Err(param_err("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Drift gain `λ`, diffusion gain `σ`, softmax sharpness `α`, step `Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CboParams<T> {
    lambda: T,
    sigma: T,
    alpha: T,
    dt: T,
    mode: Mode,
}

impl<T: Real> CboParams<T> {
    /// Validates parameters. `σ` is forced to zero in deterministic mode.
    /// `λ` may be any finite real, including negative values.
    pub fn new(lambda: T, sigma: T, alpha: T, dt: T, mode: Mode) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(param_err("lambda", "must be finite"));
        }
        if !sigma.is_finite() || sigma < T::zero() {
            return Err(param_err(
                "sigma",
                format!("must be finite and >= 0, got {sigma}"),
            ));
        }
        if !alpha.is_finite() || !(alpha > T::zero()) {
            return Err(param_err(
                "alpha",
                format!("must be finite and > 0, got {alpha}"),
            ));
        }
        if !dt.is_finite() || !(dt > T::zero()) {
            return Err(param_err("dt", format!("must be finite and > 0, got {dt}")));
        }
        let sigma = if mode == Mode::Deterministic {
            T::zero()
        } else {
            sigma
        };
        Ok(Self {
            lambda,
            sigma,
            alpha,
            dt,
            mode,
        })
    }

    pub fn deterministic(lambda: T, alpha: T, dt: T) -> Result<Self> {
        Self::new(lambda, T::zero(), alpha, dt, Mode::Deterministic)
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn with_mode(self, mode: Mode) -> Result<Self> {
        Self::new(self.lambda, self.sigma, self.alpha, self.dt, mode)
    }

    pub fn with_alpha(self, alpha: T) -> Result<Self> {
        Self::new(self.lambda, self.sigma, alpha, self.dt, self.mode)
    }

    /// Explicit Euler contracts the projected state iff `λΔ < 1`.
    pub fn euler_ok(&self) -> bool {
        self.lambda * self.dt < T::one()
    }

    /// `0 < Δ < (2λ − σ²)/λ²` together with `2λ > σ²`.
    pub fn em_ms_ok(&self) -> bool {
        let gap = T::lit(2.0) * self.lambda - self.sigma * self.sigma;
        gap > T::zero() && self.dt < gap / (self.lambda * self.lambda)
    }
}

fn check_mode<T: Real>(p: &CboParams<T>, expected: Mode) -> Result<()> {
    if p.mode != expected {
        return Err(param_err(
            "mode",
            format!("stepper for {expected} called with {} parameters", p.mode),
        ));
    }
    Ok(())
}

/// Consensus point of `ens`, plus the objective values it was built from.
fn consensus_with_values<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let values = evaluate_objective(ens, f)?;
    let w = softmax_from_values(&values, p.alpha)?;
    let nu = consensus_point(ens, &w)?.point;
    Ok((nu, values))
}

/// Applies one update given the consensus point and, for stochastic modes,
/// the Brownian increments (agent-major, `N·D` entries).
fn advance<T: Real>(
    ens: &ParticleEnsemble<T>,
    nu: &[T],
    p: &CboParams<T>,
    increments: Option<&[T]>,
) -> ParticleEnsemble<T> {
    let dim = ens.dim();
    let drift = p.lambda * p.dt;
    let mut out = Vec::with_capacity(ens.as_slice().len());
    let mut offset = vec![T::zero(); dim];
    for (n, row) in ens.agents().enumerate() {
        for ((o, &x), &c) in offset.iter_mut().zip(row).zip(nu) {
            *o = x - c;
        }
        let start = out.len();
        out.extend(row.iter().zip(&offset).map(|(&x, &o)| x - drift * o));
        let Some(dw) = increments else { continue };
        if p.sigma == T::zero() {
            continue;
        }
        let dw = &dw[n * dim..(n + 1) * dim];
        let new_row = &mut out[start..];
        match p.mode {
            Mode::Deterministic => {}
            Mode::Anisotropic => {
                for ((z, &o), &w) in new_row.iter_mut().zip(&offset).zip(dw) {
                    *z = *z + p.sigma * o * w;
                }
            }
            Mode::Isotropic => {
                let norm = offset.iter().map(|&o| o * o).sum::<T>().sqrt();
                let scale = p.sigma * norm;
                for (z, &w) in new_row.iter_mut().zip(dw) {
                    *z = *z + scale * w;
                }
            }
        }
    }
    ParticleEnsemble::from_raw_unchecked(ens.n_particles(), dim, out)
}

fn check_increments<T>(ens: &ParticleEnsemble<T>, increments: &[T]) -> Result<()>
where
    T: Real,
{
    let expected = ens.n_particles() * ens.dim();
    if increments.len() != expected {
        return Err(CboError::Shape {
            expected: format!("{expected} increments"),
            got: format!("{}", increments.len()),
        });
    }
    Ok(())
}

/// Explicit Euler step of the deterministic system.
pub fn euler_step_deterministic<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
) -> Result<ParticleEnsemble<T>> {
    check_mode(p, Mode::Deterministic)?;
    let (nu, _) = consensus_with_values(ens, p, f)?;
    Ok(advance(ens, &nu, p, None))
}

/// Euler–Maruyama step with anisotropic (coordinate-wise) diffusion.
pub fn em_step_anisotropic<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
    noise: &mut NoiseSource,
) -> Result<ParticleEnsemble<T>> {
    let dw = noise.increments(ens.n_particles(), ens.dim(), p.dt);
    em_step_anisotropic_with(ens, p, f, &dw)
}

/// Anisotropic step with caller-supplied increments `ΔW` (agent-major).
pub fn em_step_anisotropic_with<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
    increments: &[T],
) -> Result<ParticleEnsemble<T>> {
    check_mode(p, Mode::Anisotropic)?;
    check_increments(ens, increments)?;
    let (nu, _) = consensus_with_values(ens, p, f)?;
    Ok(advance(ens, &nu, p, Some(increments)))
}

/// Euler–Maruyama step with isotropic diffusion `σ‖Zⁿ − ν‖₂ ΔWⁿ`.
pub fn em_step_isotropic<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
    noise: &mut NoiseSource,
) -> Result<ParticleEnsemble<T>> {
    let dw = noise.increments(ens.n_particles(), ens.dim(), p.dt);
    em_step_isotropic_with(ens, p, f, &dw)
}

pub fn em_step_isotropic_with<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
    increments: &[T],
) -> Result<ParticleEnsemble<T>> {
    check_mode(p, Mode::Isotropic)?;
    check_increments(ens, increments)?;
    let (nu, _) = consensus_with_values(ens, p, f)?;
    Ok(advance(ens, &nu, p, Some(increments)))
}

/// Dispatches on `p.mode()`. Deterministic steps leave `noise` untouched.
pub fn step<T: Real>(
    ens: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
    noise: &mut NoiseSource,
) -> Result<ParticleEnsemble<T>> {
    match p.mode {
        Mode::Deterministic => euler_step_deterministic(ens, p, f),
        Mode::Anisotropic => em_step_anisotropic(ens, p, f, noise),
        Mode::Isotropic => em_step_isotropic(ens, p, f, noise),
    }
}

/// Simulated run: diagnostics at every step, optional thinned snapshots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    /// `(step, state)` pairs, every `snapshot_stride` steps.
    pub snapshots: Vec<(usize, ParticleEnsemble<T>)>,
    pub diagnostics: DiagnosticSeries<T>,
    /// Step at which a non-finite state or objective value was met; the
    /// series stop just before it.
    pub diverged: Option<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> T {
        *self
            .times
            .last()
            .expect("trajectory holds the initial state")
    }
}

/// Runs `steps` updates from `init`, recording diagnostics for states
/// `0..=steps`. A non-finite state truncates the run and sets `diverged`.
pub fn simulate<T: Real>(
    init: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    f: &ObjectiveHandle<T>,
    steps: usize,
    noise: &mut NoiseSource,
    snapshot_stride: usize,
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(param_err("steps", "must be at least 1"));
    }
    f.check_dim(init.dim())?;
    let (n, dim) = (init.n_particles(), init.dim());
    let mut times = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut series = DiagnosticSeries::with_capacity(dim, steps + 1);
    let mut diverged = None;
    let mut increments = vec![T::zero(); n * dim];
    let mut state = init.clone();

    for k in 0..=steps {
        let (nu, values) = match consensus_with_values(&state, p, f) {
            Ok(r) => r,
            Err(CboError::NonFiniteObjective { .. }) if k > 0 => {
                diverged = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let t = T::from_count(k) * p.dt;
        times.push(t);
        let best = values.iter().copied().fold(T::infinity(), T::min);
        series.push(t, distance_sq_to_manifold(&state), &nu, best);
        if snapshot_stride > 0 && k % snapshot_stride == 0 {
            snapshots.push((k, state.clone()));
        }
        if k == steps {
            break;
        }
        let dw = if p.mode.is_stochastic() {
            noise.fill_increments(n, dim, p.dt, &mut increments);
            Some(increments.as_slice())
        } else {
            None
        };
        let next = advance(&state, &nu, p, dw);
        if !next.is_finite() {
            diverged = Some(k + 1);
            break;
        }
        state = next;
    }

    Ok(Trajectory {
        times,
        snapshots,
        diagnostics: series,
        diverged,
    })
}

/// Uniform-weight dynamics (any constant objective) simulated in the frame
/// that moves with the ensemble mean.
///
/// With uniform weights `ν` is the column mean, and the update maps the
/// centered state `Y = P X` to `P (Y − λΔ Y + diffusion(Y))`, which is the
/// same projected offset the absolute-frame run produces. Working on `Y`
/// keeps `‖E‖` resolvable long after the agents would collapse onto one
/// floating-point position. The recorded consensus point is the tracked
/// absolute mean.
pub fn simulate_centered<T: Real>(
    init: &ParticleEnsemble<T>,
    p: &CboParams<T>,
    steps: usize,
    noise: &mut NoiseSource,
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(param_err("steps", "must be at least 1"));
    }
    let (n, dim) = (init.n_particles(), init.dim());
    let mut mean = init.column_means();
    let mut state = crate::ensemble::projected_offset(init);
    let zero = vec![T::zero(); dim];
    let mut times = Vec::with_capacity(steps + 1);
    let mut series = DiagnosticSeries::with_capacity(dim, steps + 1);
    let mut increments = vec![T::zero(); n * dim];
    let mut diverged = None;
    for k in 0..=steps {
        let t = T::from_count(k) * p.dt;
        times.push(t);
        series.push(t, distance_sq_to_manifold(&state), &mean, T::zero());
        if k == steps {
            break;
        }
        let dw = if p.mode.is_stochastic() {
            noise.fill_increments(n, dim, p.dt, &mut increments);
            Some(increments.as_slice())
        } else {
            None
        };
        let moved = advance(&state, &zero, p, dw);
        if !moved.is_finite() {
            diverged = Some(k + 1);
            break;
        }
        let drift = moved.column_means();
        for (m, d) in mean.iter_mut().zip(&drift) {
            *m = *m + *d;
        }
        state = crate::ensemble::projected_offset(&moved);
    }
    Ok(Trajectory {
        times,
        snapshots: Vec::new(),
        diagnostics: series,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::projected_offset;
    use crate::objective::{constant_handle, rastrigin_handle};

    fn pair() -> ParticleEnsemble<f64> {
        ParticleEnsemble::from_agents(&[[1.0], [-1.0]]).unwrap()
    }

    #[test]
    fn deterministic_hand_example() {
        let p = CboParams::deterministic(1.0, 1.0, 0.05).unwrap();
        let next = euler_step_deterministic(&pair(), &p, &constant_handle()).unwrap();
        assert_eq!(next.as_slice(), &[0.95, -0.95]);
    }

    #[test]
    fn anisotropic_hand_example() {
        let p = CboParams::new(1.0, 1.0, 1.0, 0.05, Mode::Anisotropic).unwrap();
        let (w1, w2) = (0.13, -0.41);
        let next = em_step_anisotropic_with(&pair(), &p, &constant_handle(), &[w1, w2]).unwrap();
        assert!((next.get(0, 0) - (0.95 + w1)).abs() < 1e-15);
        assert!((next.get(1, 0) - (-0.95 - w2)).abs() < 1e-15);
    }

    #[test]
    fn isotropic_uses_agent_norm() {
        let ens = ParticleEnsemble::from_agents(&[[3.0, 4.0], [-3.0, -4.0]]).unwrap();
        let p = CboParams::new(0.0, 2.0, 1.0, 0.1, Mode::Isotropic).unwrap();
        let next =
            em_step_isotropic_with(&ens, &p, &constant_handle(), &[1.0, 0.5, 0.0, 0.0]).unwrap();
        // ν = 0, ‖Z⁰ − ν‖ = 5, σ·5 = 10
        assert_eq!(next.agent(0), &[13.0, 9.0]);
        assert_eq!(next.agent(1), &[-3.0, -4.0]);
    }

    #[test]
    fn zero_sigma_matches_deterministic_bitwise() {
        let f = rastrigin_handle();
        let ens = ParticleEnsemble::from_agents(&[[0.3, -1.2], [2.5, 0.7], [-3.1, 4.4]]).unwrap();
        let det = CboParams::deterministic(1.0, 50.0, 0.05).unwrap();
        let expected = euler_step_deterministic(&ens, &det, &f).unwrap();
        for mode in [Mode::Anisotropic, Mode::Isotropic] {
            let p = CboParams::new(1.0, 0.0, 50.0, 0.05, mode).unwrap();
            let mut noise = NoiseSource::new(1, 0);
            assert_eq!(step(&ens, &p, &f, &mut noise).unwrap(), expected);
        }
    }

    #[test]
    fn projected_contraction_for_nonlinear_weights() {
        let f = rastrigin_handle();
        let ens =
            ParticleEnsemble::from_agents(&[[0.3, -1.2], [2.5, 0.7], [-3.1, 4.4], [1.0, 1.0]])
                .unwrap();
        let p = CboParams::deterministic(1.0, 1000.0, 0.05).unwrap();
        let next = euler_step_deterministic(&ens, &p, &f).unwrap();
        let (e0, e1) = (projected_offset(&ens), projected_offset(&next));
        for (&a, &b) in e0.as_slice().iter().zip(e1.as_slice()) {
            assert!(f64::abs(b - 0.95 * a) <= 1e-14 * f64::abs(a).max(1.0));
        }
    }

    #[test]
    fn stepper_rejects_wrong_mode_and_shape() {
        let p = CboParams::new(1.0, 1.0, 1.0, 0.05, Mode::Isotropic).unwrap();
        let f = constant_handle();
        assert!(euler_step_deterministic(&pair(), &p, &f).is_err());
        assert!(em_step_anisotropic_with(&pair(), &p, &f, &[0.0, 0.0]).is_err());
        assert!(em_step_isotropic_with(&pair(), &p, &f, &[0.0]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(CboParams::new(1.0, -1.0, 1.0, 0.05, Mode::Anisotropic).is_err());
        assert!(CboParams::new(1.0, 1.0, 0.0, 0.05, Mode::Anisotropic).is_err());
        assert!(CboParams::new(1.0, 1.0, 1.0, 0.0, Mode::Anisotropic).is_err());
        assert!(CboParams::new(f64::NAN, 1.0, 1.0, 0.1, Mode::Anisotropic).is_err());
        let p = CboParams::new(1.0, 3.0, 1.0, 0.05, Mode::Deterministic).unwrap();
        assert_eq!(p.sigma(), 0.0);
        let p = CboParams::new(-0.1, 1.0, 1.0, 0.01, Mode::Anisotropic).unwrap();
        assert!(p.euler_ok());
        assert!(!p.em_ms_ok());
        let p = CboParams::new(1.0, 1.0, 1.0, 0.05, Mode::Anisotropic).unwrap();
        assert!(p.em_ms_ok());
        let p = CboParams::new(1.0, 1.0, 1.0, 1.5, Mode::Anisotropic).unwrap();
        assert!(!p.em_ms_ok());
        assert!(!p.euler_ok());
    }

    #[test]
    fn simulate_rejects_zero_steps() {
        let p = CboParams::deterministic(1.0, 1.0, 0.05).unwrap();
        let err = simulate(
            &pair(),
            &p,
            &constant_handle(),
            0,
            &mut NoiseSource::new(0, 0),
            0,
        );
        assert!(matches!(
            err,
            Err(CboError::Parameter { name: "steps", .. })
        ));
    }

    #[test]
    fn simulate_flags_divergence() {
        let p = CboParams::new(1.0, 1e200, 1.0, 1.0, Mode::Anisotropic).unwrap();
        let ens = ParticleEnsemble::from_agents(&[[1e150], [-1e150]]).unwrap();
        let traj = simulate(
            &ens,
            &p,
            &constant_handle(),
            50,
            &mut NoiseSource::new(3, 0),
            1,
        )
        .unwrap();
        let k = traj.diverged.expect("run must blow up");
        assert_eq!(traj.len(), k);
        assert_eq!(traj.diagnostics.len(), k);
    }

    #[test]
    fn snapshots_follow_stride() {
        let p = CboParams::deterministic(1.0, 1.0, 0.05).unwrap();
        let traj = simulate(
            &pair(),
            &p,
            &constant_handle(),
            10,
            &mut NoiseSource::new(0, 0),
            4,
        )
        .unwrap();
        let steps: Vec<usize> = traj.snapshots.iter().map(|(k, _)| *k).collect();
        assert_eq!(steps, vec![0, 4, 8]);
        assert_eq!(traj.len(), 11);
        assert!((traj.final_time() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn centered_frame_matches_absolute_frame() {
        let ens =
            ParticleEnsemble::from_agents(&[[3.0, 1.0], [-2.0, 0.5], [0.7, -4.0], [9.0, 2.0]])
                .unwrap();
        for mode in [Mode::Deterministic, Mode::Anisotropic, Mode::Isotropic] {
            let p = CboParams::new(1.0, 0.8, 1.0, 0.05, mode).unwrap();
            let abs = simulate(
                &ens,
                &p,
                &constant_handle(),
                40,
                &mut NoiseSource::new(5, 1),
                0,
            )
            .unwrap();
            let cen = simulate_centered(&ens, &p, 40, &mut NoiseSource::new(5, 1)).unwrap();
            for (&a, &c) in abs
                .diagnostics
                .v_series
                .iter()
                .zip(&cen.diagnostics.v_series)
            {
                let (a, c): (f64, f64) = (a, c);
                assert!((a - c).abs() <= 1e-10 * a.max(1e-300), "{mode}: {a} vs {c}");
            }
            for (a, c) in abs
                .diagnostics
                .consensus_series
                .iter()
                .zip(&cen.diagnostics.consensus_series)
            {
                for (&x, &y) in a.iter().zip(c) {
                    assert!(f64::abs(x - y) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("isotropic".parse::<Mode>().unwrap(), Mode::Isotropic);
        assert!("brownian".parse::<Mode>().is_err());
    }
}
