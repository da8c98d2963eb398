use nadpvi::dpsgd::{clip, run_dpsgd, DpSgdConfig};
use nadpvi::evaluation::{calibration_curve, coverage_from_f, default_alpha_grid, tarp_f, CalibrationReport, CoverageReport};
use nadpvi::math::norm2;
use nadpvi::models::{make_dirichlet_categorical, make_gamma_exponential, make_linear_regression_10d, Model};
use nadpvi::postprocess::NoiseAwarePosterior;
use nadpvi::rng::rng_from_seed;
use nadpvi::vi::ElboConfig;
use proptest::prelude::*;

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_norm_bounded(g in vec_strategy(6), c in 0.01f64..10.0) {
        let out = clip(&g, c);
        prop_assert!(norm2(&out) <= c * (1.0 + 1e-12));
        if norm2(&g) <= c {
            prop_assert_eq!(&out, &g);
        }
        // same direction, idempotent
        let dot: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        prop_assert!(dot >= 0.0);
        for (a, b) in clip(&out, c).iter().zip(&out) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn clipped_sum_sensitivity(grads in prop::collection::vec(vec_strategy(4), 2..20), c in 0.1f64..5.0, drop in 0usize..20) {
        let drop = drop % grads.len();
        let full: Vec<f64> = (0..4).map(|j| grads.iter().map(|g| clip(g, c)[j]).sum()).collect();
        let neighbour: Vec<f64> = (0..4)
            .map(|j| grads.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, g)| clip(g, c)[j]).sum())
            .collect();
        let diff: Vec<f64> = full.iter().zip(&neighbour).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&diff) <= c * (1.0 + 1e-9));
    }

    #[test]
    fn coverage_non_increasing(f in prop::collection::vec(0.0f64..=1.0, 1..200)) {
        let grid = default_alpha_grid();
        let c = coverage_from_f(&f, &grid);
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(c.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rmse_zero_iff_exact(bump in -0.04f64..0.04, at in 0usize..19) {
        let grid = default_alpha_grid();
        let exact: Vec<f64> = grid.iter().map(|a| 1.0 - a).collect();
        prop_assert_eq!(CoverageReport::from_coverage(grid.clone(), exact.clone(), 10).unwrap().rmse, 0.0);
        let mut off = exact;
        off[at] += bump;
        let r = CoverageReport::from_coverage(grid, off, 10).unwrap();
        prop_assert_eq!(r.rmse == 0.0, bump == 0.0);
        prop_assert!(r.coverage_error.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn coverage_csv_round_trip(f in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let grid = default_alpha_grid();
        let r = CoverageReport::from_coverage(grid.clone(), coverage_from_f(&f, &grid), f.len()).unwrap();
        let back = CoverageReport::from_csv(&r.to_csv(), f.len()).unwrap();
        prop_assert_eq!(back.alpha, r.alpha);
        prop_assert_eq!(back.coverage, r.coverage);
        prop_assert_eq!(back.coverage_error, r.coverage_error);
        prop_assert_eq!(back.rmse, r.rmse);
    }

    #[test]
    fn tarp_distance_permutation_invariant(seed in 0u64..1000, m in 1usize..30) {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let mut draw = || (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect::<Vec<f64>>();
        let samples: Vec<Vec<f64>> = (0..m).map(|_| draw()).collect();
        let (truth, reference) = (draw(), draw());
        let perm = |v: &Vec<f64>| vec![v[2], v[0], v[1]];
        let ps: Vec<Vec<f64>> = samples.iter().map(perm).collect();
        prop_assert_eq!(tarp_f(&samples, &truth, &reference), tarp_f(&ps, &perm(&truth), &perm(&reference)));
    }

    #[test]
    fn mixture_density_ignores_component_order(seed in 0u64..1000, k in 1usize..6) {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let means: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() - 0.5]).collect();
        let scales: Vec<Vec<f64>> = (0..k).map(|_| vec![0.1 + rng.random::<f64>(), 0.1 + rng.random::<f64>()]).collect();
        let a = NoiseAwarePosterior { means: means.clone(), scales: scales.clone() };
        let b = NoiseAwarePosterior {
            means: means.into_iter().rev().collect(),
            scales: scales.into_iter().rev().collect(),
        };
        let x = [rng.random::<f64>(), -rng.random::<f64>()];
        prop_assert!((a.log_density(&x) - b.log_density(&x)).abs() < 1e-12);
    }

    #[test]
    fn calibration_bins_partition(preds in prop::collection::vec(0.0f64..=1.0, 1..200), bins in 1usize..20, seed in 0u64..100) {
        let labels: Vec<bool> = preds.iter().enumerate().map(|(i, _)| (i as u64 + seed).is_multiple_of(3)).collect();
        let r = calibration_curve(&preds, &labels, bins).unwrap();
        prop_assert_eq!(r.bins.len(), bins);
        prop_assert_eq!(r.bins[0].lo, 0.0);
        prop_assert_eq!(r.bins[bins - 1].hi, 1.0);
        prop_assert!(r.bins.windows(2).all(|w| w[0].hi == w[1].lo));
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), preds.len());
        for b in &r.bins {
            prop_assert_eq!(b.frac_pos.is_none(), b.count == 0);
            if let Some(f) = b.frac_pos {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
        let back = CalibrationReport::from_csv(&r.to_csv(), r.rmse).unwrap();
        prop_assert_eq!(back, r);
    }

    #[test]
    fn transforms_round_trip(seed in 0u64..500) {
        let mut rng = rng_from_seed(seed);
        let m3 = make_dirichlet_categorical([1.0, 2.0, 0.5]).unwrap();
        let lin = make_linear_regression_10d();
        for theta in [m3.prior_sample(&mut rng), lin.prior_sample(&mut rng)] {
            let t = if theta.len() == 3 { m3.transform() } else { lin.transform() };
            let back = t.inverse(&t.forward(&theta));
            for (a, b) in back.iter().zip(&theta) {
                prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trace_follows_update_rule(seed in 0u64..1000, c in 0.5f64..4.0, beta_u in 1.0f64..20.0) {
        let m = make_gamma_exponential(2.0, 2.0).unwrap();
        let mut rng = rng_from_seed(seed);
        let theta = m.prior_sample(&mut rng);
        let data = m.simulate(&mut rng, &theta, 200);
        let cfg = DpSgdConfig::with_defaults(1, c, 0.2, 60, 3.0, beta_u, seed);
        let trace = run_dpsgd(&m, &data, &ElboConfig::new(4, data.len()).unwrap(), &cfg).unwrap();
        prop_assert_eq!(trace.params.len(), 61);
        prop_assert_eq!(trace.noisy_grads.len(), 60);
        prop_assert_eq!(&trace.effective_lr, &cfg.effective_lr());
        for t in 0..60 {
            for j in 0..2 {
                let want = trace.params[t][j] - trace.effective_lr[j] * trace.noisy_grads[t][j];
                prop_assert!((trace.params[t + 1][j] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
        // same seed, same trace
        let again = run_dpsgd(&m, &data, &ElboConfig::new(4, data.len()).unwrap(), &cfg).unwrap();
        prop_assert_eq!(again.params, trace.params);
    }
}
