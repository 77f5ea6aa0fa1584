//! End-to-end runs over small synthetic data: plan, registry, forecasts,
//! evaluation and the ensemble extrapolation.

use bvcast::data::{Generator, SyntheticSpec};
use bvcast::decomp::SscvConfig;
use bvcast::ensemble::{forecast_ensemble, observe_final, VotingEnsemble};
use bvcast::experiment::{read_records, run_plan, split_finals, DatasetSource, ExperimentPlan, RunOptions};
use bvcast::forecast::{build_registry, evaluate, forecast_cell, ModelRegistry, Predicted, Variable};

fn source(name: &str, generator: Generator, items: usize, d: usize, k: usize, seed: u64) -> DatasetSource {
    DatasetSource::Synthetic {
        name: name.into(),
        spec: SyntheticSpec {
            generator,
            item_count: items,
            feature_count: d,
            class_count: k,
            bayes_error: 0.05,
            seed,
            separation: 2.5,
        },
    }
}

fn plan(dir: &std::path::Path) -> ExperimentPlan {
    ExperimentPlan {
        datasets: vec![
            source("mix-a", Generator::GaussianMixture, 400, 2, 2, 1),
            source("mix-b", Generator::GaussianMixture, 500, 3, 3, 2),
            source("cube-a", Generator::RuleLabelledHypercube, 450, 3, 2, 3),
        ],
        learners: vec!["gnb".into(), "stump".into(), "knn:k=3".into()],
        n_grid: vec![60, 120, 240],
        sscv: SscvConfig::new(5, 4, 11),
        output_dir: dir.to_path_buf(),
        parallelism: 2,
        ensemble: None,
    }
}

#[test]
fn plan_to_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan(dir.path());
    plan.validate().unwrap();
    let sets = plan.load_datasets(dir.path()).unwrap();
    let summary = run_plan(&plan, &sets, &RunOptions { jobs: 2, force: false }).unwrap();
    assert!(summary.complete());
    assert_eq!(summary.total, 3 * 3 * 4);
    assert_eq!(summary.computed, summary.total);

    let records = read_records(&summary.records_path).unwrap();
    assert_eq!(records.len(), summary.total);
    for r in &records {
        assert!((r.error - (r.bias2 + r.variance)).abs() <= 1e-12);
    }
    let (grid, finals) = split_finals(records);
    assert_eq!(grid.len(), 27);
    assert_eq!(finals.len(), 9);

    let registry = build_registry(&grid, &finals).unwrap();
    assert_eq!(registry.n_grid, vec![60, 120, 240]);
    assert_eq!(registry.entries.len(), 9);
    for v in Variable::ALL {
        for &n in &registry.n_grid {
            assert_eq!(registry.model(v, n).unwrap().point_count, 9);
        }
    }

    let path = dir.path().join("registry.json");
    registry.save(&path).unwrap();
    assert_eq!(ModelRegistry::load(&path).unwrap(), registry);

    let forecasts: Vec<_> = grid
        .iter()
        .filter(|r| r.n == 240)
        .map(|r| {
            let mut f = forecast_cell(&registry, r, false).unwrap();
            f.observed_final = finals
                .iter()
                .find(|x| x.dataset == r.dataset && x.learner == r.learner)
                .map(|x| x.decomposition());
            f
        })
        .collect();
    for f in &forecasts {
        assert!((f.p_e1 - (f.p_b + f.p_v)).abs() <= 1e-15);
        assert!((0.0..=1.0).contains(&f.p_e1));
    }
    let report = evaluate(&forecasts).unwrap();
    assert_eq!(report.count, 9);
    assert_eq!(report.rows.len(), 9 * 4);
    let direct = report.variable(Predicted::ErrorDirect).unwrap();
    // In-sample OLS reproduces the observed mean exactly.
    assert!(direct.mean_rel_dev_pct.is_some());
    assert!(direct.r2.unwrap() > 0.5);
}

#[test]
fn rerun_reuses_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = plan(dir.path());
    plan.datasets.truncate(1);
    plan.learners.truncate(2);
    let sets = plan.load_datasets(dir.path()).unwrap();
    let first = run_plan(&plan, &sets, &RunOptions { jobs: 1, force: false }).unwrap();
    let bytes = std::fs::read(&first.records_path).unwrap();
    let again = run_plan(&plan, &sets, &RunOptions { jobs: 3, force: false }).unwrap();
    assert_eq!(again.computed, 0);
    assert_eq!(again.reused, first.total);
    assert_eq!(std::fs::read(&again.records_path).unwrap(), bytes);
}

#[test]
fn ensemble_forecast_on_noisy_mixture() {
    let data = source("ens", Generator::GaussianMixture, 900, 2, 2, 5)
        .load(std::path::Path::new("."))
        .unwrap();
    let ens: VotingEnsemble = "ens:plurality[gnb|stump|knn:k=1]".parse().unwrap();
    let cfg = SscvConfig::new(5, 4, 3);
    let grid: Vec<usize> = (100..=500).step_by(100).collect();
    let fc = forecast_ensemble(&data, &ens, &grid, &cfg).unwrap();
    assert_eq!(fc.or_curve.len(), grid.len());
    assert_eq!(fc.error_curve.len(), grid.len());
    assert!(fc.or_constant >= 0.0 && fc.or_constant <= 1.0);
    for p in &fc.or_curve {
        assert_eq!(p.a_plus + p.a_minus + p.b_count, p.n);
    }
    let pred = fc.predict(900);
    assert!(pred.lower <= pred.value && pred.value <= pred.upper);
    assert!(pred.value >= fc.or_constant - 1e-12);

    let obs = observe_final(&data, &ens, &cfg).unwrap();
    assert_eq!(obs.n, 900);
    assert!((0.0..=1.0).contains(&obs.error_mean));
}
