use std::sync::OnceLock;

use proptest::prelude::*;

use sandpile_core::rng::{stream_key, Stream};
use sandpile_core::sandpile::{
    init_configuration, odometer_exact, topple_to_stability, SiteDomain, ToppleOptions,
};
use sandpile_core::scaling::{kernel_kn, TestFunction};
use sandpile_core::stable::{HeavyTailLaw, Quantiles};
use sandpile_core::torus::{
    dft_forward_real, dft_inverse, laplacian_apply, poisson_solve, RealField, TorusGrid,
};
use sandpile_core::Complex64;

fn grid_strategy() -> impl Strategy<Value = TorusGrid> {
    (1usize..=3, 2usize..=6).prop_map(|(d, n)| TorusGrid::new(d, n).unwrap())
}

fn mean_zero_field() -> impl Strategy<Value = RealField> {
    grid_strategy().prop_flat_map(|grid| {
        prop::collection::vec(-10.0f64..10.0, grid.len()).prop_map(move |mut v| {
            let avg = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= avg);
            RealField::from_vec(grid, v).unwrap()
        })
    })
}

fn test_function() -> impl Strategy<Value = TestFunction> {
    (1usize..=2)
        .prop_flat_map(|d| {
            let mode = prop::collection::vec(-3i64..=3, d)
                .prop_filter("nonzero", |z| z.iter().any(|&k| k != 0));
            (Just(d), prop::collection::vec((mode, -2.0f64..2.0, -2.0f64..2.0), 1..4))
        })
        .prop_filter_map("hermitian conflict", |(d, entries)| {
            // keep the first occurrence of each ±z pair
            let mut seen: Vec<Vec<i64>> = Vec::new();
            let mut kept = Vec::new();
            for (z, re, im) in entries {
                let neg: Vec<i64> = z.iter().map(|k| -k).collect();
                if seen.contains(&z) || seen.contains(&neg) {
                    continue;
                }
                seen.push(z.clone());
                kept.push((z, Complex64::new(re, im)));
            }
            TestFunction::new(d, kept).ok().filter(|f| !f.is_zero())
        })
}

fn stable_tables() -> &'static [Quantiles; 3] {
    static TABLES: OnceLock<[Quantiles; 3]> = OnceLock::new();
    TABLES.get_or_init(|| {
        [1.2, 1.5, 1.8].map(|alpha| Quantiles::new(&HeavyTailLaw::stable(alpha, 1.0).unwrap()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dft_round_trip(field in mean_zero_field()) {
        let back = dft_inverse(&dft_forward_real(&field));
        for (a, b) in field.values().iter().zip(back.values()) {
            prop_assert!((a - b.re).abs() < 1e-11 && b.im.abs() < 1e-11);
        }
    }

    #[test]
    fn poisson_inverts_laplacian(field in mean_zero_field()) {
        let v = poisson_solve(&field).unwrap();
        prop_assert!(v.sum().abs() < 1e-9);
        let lv = laplacian_apply(&v).unwrap();
        prop_assert!(lv.max_abs_diff(&field) < 1e-9);
    }

    #[test]
    fn literal_round_trip(f in test_function()) {
        let parsed: TestFunction = f.to_string().parse().unwrap();
        prop_assert_eq!(parsed, f);
    }

    #[test]
    fn test_functions_are_real(f in test_function(), x in prop::collection::vec(0.0f64..1.0, 2)) {
        let x = &x[..f.dim()];
        prop_assert!(sandpile_core::scaling::eval_test_function(&f, x).is_ok());
    }

    #[test]
    fn kernel_power_sum_is_homogeneous(
        f in test_function(),
        c in 0.1f64..5.0,
        alpha in 1.0f64..=2.0,
    ) {
        let grid = TorusGrid::new(f.dim(), 8).unwrap();
        let base = kernel_kn(&grid, &f, alpha).unwrap().power_sum;
        let scaled = kernel_kn(&grid, &f.scaled(c), alpha).unwrap().power_sum;
        prop_assert!((scaled - c.powf(alpha) * base).abs() <= 1e-10 * scaled.max(1e-300));
    }

    #[test]
    fn toppling_conserves_and_matches_exact(seed in any::<u64>(), n in 2usize..=6, d in 1usize..=2) {
        let grid = TorusGrid::new(d, n).unwrap();
        let law = HeavyTailLaw::gaussian(0.5).unwrap();
        let config = init_configuration(SiteDomain::Torus(grid), &law, 1.0, true, seed).unwrap();
        let done = topple_to_stability(&config, &ToppleOptions::default()).unwrap();
        prop_assert!(done.stabilized);
        prop_assert!(done.odometer.values.iter().all(|&u| u >= 0.0));
        prop_assert!((done.config.total() - config.total()).abs() < 1e-8 * grid.len() as f64);
        prop_assert!(done.config.masses.iter().all(|&s| (s - 1.0).abs() < 1e-8));
        let exact = odometer_exact(&grid, &config).unwrap();
        let sim = done.odometer.normalized();
        for (a, b) in sim.iter().zip(&exact.values) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quantiles_are_monotone(p in 0.001f64..0.499, which in 0usize..3, scale in 0.5f64..2.0) {
        let stable = &stable_tables()[which];
        let alpha = stable.law().alpha();
        let pareto = Quantiles::new(&HeavyTailLaw::pareto(alpha, scale).unwrap()).unwrap();
        for q in [stable, &pareto] {
            let lo = q.quantile(p).unwrap();
            prop_assert!(lo <= q.quantile(p + 0.5).unwrap());
            // symmetry
            prop_assert!((q.quantile(1.0 - p).unwrap() + lo).abs() < 1e-8 * (1.0 + lo.abs()));
            prop_assert!((q.law().cdf(lo) - p).abs() < 1e-6);
        }
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), index in 0u64..1000) {
        let mut a = Stream::new(seed, "prop", index);
        let mut b = Stream::new(seed, "prop", index);
        for _ in 0..16 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        prop_assert_ne!(stream_key(seed, "prop", index), stream_key(seed, "prop", index + 1));
    }
}
