use cbo_core::ensemble::softmax_from_values;
use cbo_core::objective::{constant_handle, discontinuous_handle, rastrigin_handle};
use cbo_core::spectral::{projection_residual, LaplacianHat, Projector};
use cbo_core::{
    build_l_hat, consensus_point, distance_sq_to_manifold, fit_decay_rate, simulate,
    theoretical_rates, Ensemble, Mode, NoiseSource, Objective, Params, Weights,
};
use num_rational::Ratio;
use proptest::prelude::*;

fn simplex(raw: &[f64]) -> Weights {
    let s: f64 = raw.iter().sum();
    Weights::new(raw.iter().map(|x| x / s).collect()).unwrap()
}

fn ensemble(n: usize, dim: usize) -> impl Strategy<Value = Ensemble> {
    prop::collection::vec(-5.0f64..5.0, n * dim)
        .prop_map(move |v| Ensemble::from_rows(n, dim, v).unwrap())
}

proptest! {
    #[test]
    fn softmax_lies_on_simplex(values in prop::collection::vec(-1e3f64..1e3, 1..40), alpha in 1e-3f64..1e4) {
        let w = softmax_from_values(&values, alpha).unwrap();
        let s: f64 = w.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(w.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
        // The minimiser always carries the largest weight.
        let imin = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let wmax = w.as_slice().iter().cloned().fold(0.0, f64::max);
        prop_assert_eq!(w.as_slice()[imin], wmax);
    }

    #[test]
    fn softmax_ignores_constant_shift(values in prop::collection::vec(-10.0f64..10.0, 1..20), shift in -1e3f64..1e3) {
        let a = softmax_from_values(&values, 3.0).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let b = softmax_from_values(&shifted, 3.0).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn consensus_in_bounding_box(ens in (1usize..30).prop_flat_map(|n| ensemble(n, 3))) {
        let w = Weights::uniform(ens.n_particles()).unwrap();
        let nu = consensus_point(&ens, &w).unwrap().point;
        for (d, &c) in nu.iter().enumerate() {
            let col = ens.column(d);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
        }
    }

    #[test]
    fn projection_identity_exact(raw in prop::collection::vec(1i64..50, 1..9)) {
        let total: i64 = raw.iter().sum();
        let w: Vec<Ratio<i64>> = raw.iter().map(|&k| Ratio::new(k, total)).collect();
        let l = LaplacianHat::from_raw_weights(&w);
        let p = Projector::<Ratio<i64>>::new(w.len());
        prop_assert_eq!(projection_residual(&l, &p).unwrap(), Ratio::from_integer(0));
        let pp = p.dense().mul(p.dense()).unwrap();
        prop_assert_eq!(pp.max_abs_diff(p.dense()).unwrap(), Ratio::from_integer(0));
        prop_assert_eq!(l.max_abs_row_sum(), Ratio::from_integer(0));
    }

    #[test]
    fn projection_identity_float(raw in prop::collection::vec(0.01f64..1.0, 1..60)) {
        let l = build_l_hat(&simplex(&raw));
        let p = Projector::<f64>::new(raw.len());
        prop_assert!(projection_residual(&l, &p).unwrap() <= 1e-12);
        prop_assert!(l.max_abs_row_sum() <= 1e-12);
    }

    #[test]
    fn rate_report_orderings(lambda in -1.0f64..3.0, sigma in 0.0f64..2.0, dt in 1e-3f64..0.2, dim in 1usize..50) {
        let p = Params::new(lambda, sigma, 1.0, dt, Mode::Anisotropic).unwrap();
        let r = theoretical_rates(&p, dim);
        prop_assert!(r.em_ms_rate <= r.ms_rate + 1e-12);
        prop_assert!(r.as_rate >= r.ms_rate / 2.0 - 1e-12);
        prop_assert_eq!(r.ms_condition_ok, r.ms_rate > 0.0);
        prop_assert!(r.isotropic_mf_rate <= r.ms_rate + 1e-12);
    }

    #[test]
    fn em_rate_approaches_ms_rate(lambda in 0.1f64..3.0, sigma in 0.0f64..2.0) {
        let rate = |dt: f64| {
            let p = Params::new(lambda, sigma, 1.0, dt, Mode::Anisotropic).unwrap();
            theoretical_rates(&p, 2).em_ms_rate
        };
        let (a, b, c) = (rate(0.1), rate(0.05), rate(0.01));
        prop_assert!(a <= b && b <= c);
        prop_assert!(c <= 2.0 * lambda - sigma * sigma + 1e-12);
    }

    #[test]
    fn deterministic_rate_independent_of_objective(
        ens in ensemble(12, 2),
        alpha in prop::sample::select(vec![1.0, 30.0, 1000.0]),
        which in 0usize..3,
    ) {
        let f: Objective = [rastrigin_handle(), discontinuous_handle(), constant_handle()][which].clone();
        let p = Params::deterministic(1.0, alpha, 0.05).unwrap();
        let traj = simulate(&ens, &p, &f, 40, &mut NoiseSource::new(0, 0), 0).unwrap();
        let fit = fit_decay_rate(&traj.times, &traj.diagnostics.v_series, 0).unwrap();
        let want = 2.0 * 0.95f64.ln() / 0.05;
        prop_assert!((fit.slope - want).abs() <= 1e-9 * want.abs());
    }

    #[test]
    fn consensus_state_is_absorbing(point in prop::collection::vec(-5.0f64..5.0, 1..5), seed in any::<u64>(), m in 0usize..3) {
        let mode = [Mode::Deterministic, Mode::Anisotropic, Mode::Isotropic][m];
        let ens = Ensemble::at_consensus(7, &point).unwrap();
        let p = Params::new(1.0, 1.0, 1000.0, 0.05, mode).unwrap();
        let traj = simulate(&ens, &p, &rastrigin_handle(), 20, &mut NoiseSource::new(seed, 0), 20).unwrap();
        let last = &traj.snapshots.last().unwrap().1;
        prop_assert_eq!(last.as_slice(), ens.as_slice());
        prop_assert_eq!(distance_sq_to_manifold(last), 0.0);
    }
}
