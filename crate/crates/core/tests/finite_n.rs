use cbo_core::dynamics::{em_step_anisotropic_with, em_step_isotropic_with};
use cbo_core::montecarlo::{run_replicate, McConfig};
use cbo_core::objective::constant_handle;
use cbo_core::{
    distance_sq_to_manifold, em_as_rate_mc, pathwise_log_rate, simulate_centered, Ensemble, Mode,
    NoiseSource, Params,
};

/// Sample mean and standard error of one-step ratios `‖E⁺‖² / ‖E‖²` from a
/// fixed ensemble, each sample with fresh increments.
fn one_step_ratio(ens: &Ensemble, p: &Params, samples: u64, seed: u64) -> (f64, f64) {
    let f = constant_handle();
    let v0 = distance_sq_to_manifold(ens);
    let (n, dim) = (ens.n_particles(), ens.dim());
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in 0..samples {
        let dw = NoiseSource::new(seed, s).increments(n, dim, p.dt());
        let next = match p.mode() {
            Mode::Isotropic => em_step_isotropic_with(ens, p, &f, &dw),
            _ => em_step_anisotropic_with(ens, p, &f, &dw),
        }
        .unwrap();
        let r = distance_sq_to_manifold(&next) / v0;
        sum += r;
        sum_sq += r * r;
    }
    let k = samples as f64;
    let mean = sum / k;
    let var = (sum_sq - sum * mean) / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn spread(n: usize, dim: usize) -> Ensemble {
    let data = (0..n * dim)
        .map(|i| ((i * 7919) % 101) as f64 / 10.0 - 5.0)
        .collect();
    Ensemble::from_rows(n, dim, data).unwrap()
}

#[test]
fn mean_square_factor_exact_at_small_n() {
    // Uniform weights: E‖P(E∘ΔW)‖² = Δ(1 − 1/N)‖E‖².
    let p = Params::new(1.0, 1.0, 1.0, 0.05, Mode::Anisotropic).unwrap();
    for n in [2usize, 4, 8] {
        let ens = spread(n, 2);
        let (est, se) = one_step_ratio(&ens, &p, 100_000, 11);
        let exact = 0.95f64.powi(2) + 0.05 * (1.0 - 1.0 / n as f64);
        assert!(
            (est - exact).abs() < 4.0 * se,
            "N={n}: {est} ± {se} vs {exact}"
        );
    }
}

#[test]
fn mean_square_factor_large_n() {
    let p = Params::new(1.0, 1.0, 1.0, 0.05, Mode::Anisotropic).unwrap();
    let n = 400;
    let ens = spread(n, 2);
    let (est, se) = one_step_ratio(&ens, &p, 20_000, 12);
    let stated = 0.95f64.powi(2) + 0.05;
    assert!(
        (est - stated).abs() < 4.0 * se + 0.05 / n as f64,
        "{est} ± {se} vs {stated}"
    );
}

#[test]
fn isotropic_matches_anisotropic_in_one_dimension() {
    let ens = spread(6, 1);
    let aniso = Params::new(1.0, 1.0, 1.0, 0.05, Mode::Anisotropic).unwrap();
    let iso = aniso.with_mode(Mode::Isotropic).unwrap();
    let (a, sa) = one_step_ratio(&ens, &aniso, 100_000, 21);
    let (b, sb) = one_step_ratio(&ens, &iso, 100_000, 22);
    assert!(
        (a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(),
        "{a} vs {b}"
    );
}

#[test]
fn two_agents_reduce_to_scalar_recursion() {
    // For N = 2, D = 1 the offset is scalar: e⁺ = e·(1 − λΔ + σ(ΔW₁ + ΔW₂)/2).
    let (lambda, sigma, dt) = (1.0, 1.0, 0.05);
    let p = Params::new(lambda, sigma, 1.0, dt, Mode::Anisotropic).unwrap();
    let init = Ensemble::from_agents(&[[1.0], [-1.0]]).unwrap();
    let steps = 300;
    let traj = simulate_centered(&init, &p, steps, &mut NoiseSource::new(3, 0)).unwrap();
    let mut noise = NoiseSource::new(3, 0);
    let e = &traj.diagnostics.e_norm_series;
    for k in 0..steps {
        let dw = noise.increments(2, 1, dt);
        let factor: f64 = 1.0 - lambda * dt + sigma * (dw[0] + dw[1]) / 2.0;
        let got = (e[k + 1] / e[k]).ln();
        assert!((got - factor.abs().ln()).abs() < 1e-10, "step {k}");
    }
}

#[test]
fn two_agent_pathwise_rate_matches_effective_noise() {
    let (lambda, sigma, dt) = (1.0, 1.0, 0.05);
    let p = Params::new(lambda, sigma, 1.0, dt, Mode::Anisotropic).unwrap();
    let init = Ensemble::from_agents(&[[1.0], [-1.0]]).unwrap();
    let rates: Vec<f64> = (0..40)
        .map(|s| {
            let traj = simulate_centered(&init, &p, 2000, &mut NoiseSource::new(77, s)).unwrap();
            pathwise_log_rate(&traj).unwrap().value()
        })
        .collect();
    let m = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / m;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let mc = em_as_rate_mc(lambda, sigma / 2f64.sqrt(), dt, 1_000_000, 5).unwrap();
    let tol = 4.0 * (se * se + mc.std_error * mc.std_error).sqrt();
    assert!(
        (mean + mc.estimate).abs() < tol,
        "{mean} ± {se} vs −{}",
        mc.estimate
    );
}

#[test]
fn violating_regime_rarely_diverges_in_window() {
    let p = Params::new(1.0, 2.1f64.sqrt(), 1000.0, 0.05, Mode::Anisotropic).unwrap();
    let cfg = McConfig::base(p);
    let f = cbo_core::objective::rastrigin_handle();
    let finite = (0..100)
        .filter(|&r| run_replicate(&cfg, &f, r).unwrap().diverged.is_none())
        .count();
    assert!(finite >= 95, "{finite} of 100 runs stayed finite");
}
