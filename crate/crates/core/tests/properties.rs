use proptest::prelude::*;

use sdeop::evaluation::{ks_distance, standardized_mse, Ecdf};
use sdeop::paths::dataset::{dataset_to_string, parse_dataset};
use sdeop::paths::{make_grid, sample_brownian, PathDataset, SolutionPath};
use sdeop::solvers::{burgers_drift, burgers_drift_sorted, exact_ou, ModelSpec};

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..40)
}

fn quantized() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..8).prop_map(|k| k as f64 * 0.5), 1..30)
}

proptest! {
    #[test]
    fn ks_is_symmetric_and_bounded(a in sample(), b in sample()) {
        let (ea, eb) = (Ecdf::new(&a).unwrap(), Ecdf::new(&b).unwrap());
        let d = ks_distance(&ea, &eb);
        prop_assert_eq!(d, ks_distance(&eb, &ea));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(ks_distance(&ea, &ea), 0.0);
    }

    #[test]
    fn ks_triangle_inequality(a in quantized(), b in quantized(), c in quantized()) {
        let e: Vec<Ecdf> = [a, b, c].iter().map(|s| Ecdf::new(s).unwrap()).collect();
        let d = |i: usize, j: usize| ks_distance(&e[i], &e[j]);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-15);
    }

    #[test]
    fn ks_matches_brute_force(a in quantized(), b in quantized()) {
        let (ea, eb) = (Ecdf::new(&a).unwrap(), Ecdf::new(&b).unwrap());
        let brute = a
            .iter()
            .chain(&b)
            .map(|&x| (ea.eval(x) - eb.eval(x)).abs())
            .fold(0.0, f64::max);
        prop_assert!((ks_distance(&ea, &eb) - brute).abs() < 1e-15);
    }

    #[test]
    fn ecdf_is_a_nondecreasing_step_function(a in sample()) {
        let e = Ecdf::new(&a).unwrap();
        let bp = e.breakpoints();
        prop_assert_eq!(bp.last().unwrap().1, 1.0);
        for w in bp.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        for &(x, f) in &bp {
            prop_assert_eq!(e.eval(x), f);
        }
    }

    #[test]
    fn standardized_mse_lies_in_unit_interval(
        p in prop::collection::vec(-10.0f64..10.0, 4),
        t in prop::collection::vec(-10.0f64..10.0, 4),
        alpha in 0.1f64..10.0,
        beta in -5.0f64..5.0,
    ) {
        let g = make_grid(0.0, 0.1, 4).unwrap();
        let (pp, tp) = (SolutionPath::new(g, p.clone()).unwrap(), SolutionPath::new(g, t).unwrap());
        if let Ok(e) = standardized_mse(&pp, &tp) {
            prop_assert!((0.0..=1.0).contains(&e));
            let affine = SolutionPath::new(g, p.iter().map(|v| alpha * v + beta).collect()).unwrap();
            prop_assert!(standardized_mse(&affine, &pp).unwrap() < 1e-20);
        }
    }

    #[test]
    fn sorted_burgers_drift_matches_counting(
        particles in prop::collection::vec((-20i32..20).prop_map(|k| k as f64 * 0.25), 1..50),
        x in (-25i32..25).prop_map(|k| k as f64 * 0.25),
    ) {
        let mut sorted = particles.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(burgers_drift(&particles, x).unwrap(), burgers_drift_sorted(&sorted, x));
    }

    #[test]
    fn dataset_text_round_trip(n in 0usize..5, m in 2usize..8, seed in any::<u64>()) {
        let g = make_grid(0.0, 0.05, m).unwrap();
        let model = ModelSpec::Ou { a: 0.7, b: 1.3 };
        let b: Vec<_> = (0..n as u64).map(|i| sample_brownian(&g, seed ^ i)).collect();
        let x: Vec<_> = b.iter().map(|p| model.reference(0.25, p).unwrap()).collect();
        let ds = PathDataset::new(g, b, x, model.descriptor().to_string())
            .unwrap()
            .with_metadata("note", "prop");
        let back = parse_dataset(&dataset_to_string(&ds).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn brownian_paths_are_reproducible(m in 2usize..50, seed in any::<u64>()) {
        let g = make_grid(0.0, 0.01, m).unwrap();
        let a = sample_brownian(&g, seed);
        prop_assert_eq!(a.values[0], 0.0);
        prop_assert_eq!(&a, &sample_brownian(&g, seed));
    }

    #[test]
    fn ou_without_noise_decays(x0 in -3.0f64..3.0, a in 0.0f64..2.0, seed in any::<u64>()) {
        let g = make_grid(0.0, 0.1, 10).unwrap();
        let b = sample_brownian(&g, seed);
        let x = exact_ou(a, 0.0, x0, &b);
        for (k, v) in x.values.iter().enumerate() {
            prop_assert!((v - x0 * (-a * g.time(k)).exp()).abs() < 1e-12);
        }
    }
}
