use bvcast::data::{generate, Dataset, Generator, SyntheticSpec};
use bvcast::decomp::{decompose, decompose_items, fold_partition, run_sscv, ItemDecomposition, PredictionRecord, SscvConfig};
use bvcast::ensemble::oracle_partition;
use bvcast::learners::Learner;
use bvcast::regress::{constant_fit, fit_power_law, ols, paired_t_test, t_cdf};
use proptest::prelude::*;

fn records(classes: usize, l: usize) -> impl Strategy<Value = Vec<PredictionRecord>> {
    let item = (0..classes, prop::collection::vec(0..classes, l));
    prop::collection::vec(item, 1..40).prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (t, p))| PredictionRecord {
                item_index: i,
                true_label: t,
                predictions: p,
            })
            .collect()
    })
}

fn small_dataset(seed: u64, n: usize) -> Dataset {
    generate(&SyntheticSpec {
        generator: Generator::GaussianMixture,
        item_count: n,
        feature_count: 2,
        class_count: 3,
        bayes_error: 0.05,
        seed,
        separation: 2.0,
    })
    .unwrap()
}

proptest! {
    #[test]
    fn item_terms_sum_and_stay_in_range(counts in prop::collection::vec(0usize..12, 2..6), t in 0usize..6) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let t = t % counts.len();
        let it = ItemDecomposition::from_counts(&counts, t);
        prop_assert!((it.error - (it.bias2 + it.variance)).abs() <= 1e-12);
        prop_assert!(it.variance >= 0.0 && it.variance <= 0.5);
        prop_assert!(it.bias2 >= -1e-15 && it.bias2 <= 1.0 + 1e-15);
        prop_assert!((0.0..=1.0).contains(&it.error));
    }

    #[test]
    fn aggregate_identity_holds((c, recs) in (2usize..5).prop_flat_map(|c| (Just(c), records(c, 7)))) {
        let d = decompose(&recs, c).unwrap();
        prop_assert!((d.error - (d.bias2 + d.variance)).abs() <= 1e-12);
        let items = decompose_items(&recs, c).unwrap();
        let mean_err = items.iter().map(|i| i.error).sum::<f64>() / items.len() as f64;
        prop_assert!((mean_err - d.error).abs() <= 1e-12);
    }

    #[test]
    fn oracle_bound_sandwiches_bias((c, recs) in (2usize..5).prop_flat_map(|c| (Just(c), records(c, 5)))) {
        let d = decompose(&recs, c).unwrap();
        let p = oracle_partition(&recs).unwrap();
        prop_assert_eq!(p.a_plus + p.a_minus + p.b_count, p.total);
        let m = p.total as f64;
        prop_assert!(p.or_value <= d.bias2 + 1e-12);
        prop_assert!(d.bias2 <= p.or_value + p.b_count as f64 / m + 1e-12);
    }

    #[test]
    fn folds_partition_every_item_once(n in 2usize..300, folds in 2usize..12, seed: u64) {
        prop_assume!(folds <= n);
        let parts = fold_partition(n, folds, seed);
        prop_assert_eq!(parts.len(), folds);
        let mut seen = vec![0u8; n];
        for p in &parts {
            prop_assert!(p.len() == n / folds || p.len() == n / folds + 1);
            for &i in p {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn prefixes_are_nested(seed: u64, a in 1usize..120, b in 1usize..120) {
        let data = small_dataset(7, 120);
        let (small, large) = (a.min(b), a.max(b));
        let s = data.prefix(small, seed).unwrap();
        let l = data.prefix(large, seed).unwrap();
        for i in 0..small {
            prop_assert_eq!(s.row(i), l.row(i));
            prop_assert_eq!(s.label(i), l.label(i));
        }
    }

    #[test]
    fn ols_recovers_exact_lines(slope in -5.0f64..5.0, intercept in -5.0f64..5.0, xs in prop::collection::btree_set(-100i32..100, 3..30)) {
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x as f64, slope * x as f64 + intercept)).collect();
        let m = ols(&pts).unwrap();
        prop_assert!((m.slope - slope).abs() <= 1e-9 * (1.0 + slope.abs()));
        prop_assert!((m.intercept - intercept).abs() <= 1e-7 * (1.0 + intercept.abs()));
        prop_assert!(m.r2 >= 0.0 && m.r2 <= 1.0);
    }

    #[test]
    fn ols_r2_in_unit_interval(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40)) {
        prop_assume!(pts.iter().any(|p| p.0 != pts[0].0));
        let m = ols(&pts).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&m.r2));
    }

    #[test]
    fn constant_fit_is_between_extremes(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let c = constant_fit(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(c >= lo && c <= hi);
    }

    #[test]
    fn t_cdf_is_monotone_and_symmetric(t in -20.0f64..20.0, dt in 0.0f64..5.0, df in 1.0f64..60.0) {
        let (lo, hi) = (t_cdf(t, df), t_cdf(t + dt, df));
        prop_assert!(lo <= hi + 1e-14);
        prop_assert!((t_cdf(-t, df) - (1.0 - lo)).abs() <= 1e-12);
    }

    #[test]
    fn t_test_p_in_unit_interval(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..30)) {
        let r = paired_t_test(&pairs).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_two_sided));
    }

    #[test]
    fn power_law_respects_constraints(a in 0.1f64..10.0, b in -1.5f64..-0.05, c in 0.0f64..0.3, robust: bool) {
        let pts: Vec<(f64, f64)> = (1..=20).map(|i| {
            let n = 50.0 * i as f64;
            (n, a * n.powf(b) + c)
        }).collect();
        let m = fit_power_law(&pts, c, robust).unwrap();
        prop_assert!(m.a >= 0.0);
        prop_assert!((-3.0..=-0.001).contains(&m.b));
        prop_assert!((m.b - b).abs() <= 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sscv_records_are_complete(seed: u64, folds in 2usize..6, repeats in 1usize..4) {
        let data = small_dataset(seed, 60);
        let recs = run_sscv(&data, &Learner::tree(3), &SscvConfig::new(folds, repeats, seed)).unwrap();
        prop_assert_eq!(recs.len(), 60);
        for (i, r) in recs.iter().enumerate() {
            prop_assert_eq!(r.item_index, i);
            prop_assert_eq!(r.true_label, data.label(i));
            prop_assert_eq!(r.predictions.len(), repeats);
        }
    }

    #[test]
    fn sscv_is_deterministic(seed: u64) {
        let data = small_dataset(seed, 50);
        let cfg = SscvConfig::new(5, 3, seed);
        let learner = Learner::bagged(3, 4).with_seed(seed);
        prop_assert_eq!(run_sscv(&data, &learner, &cfg).unwrap(), run_sscv(&data, &learner, &cfg).unwrap());
    }
}
