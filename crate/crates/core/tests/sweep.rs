mod common;

use std::sync::Arc;

use common::*;
use logo_core::dependence::{pearson_correlation, Estimator};
use logo_core::forest::EdgeSet;
use logo_core::gaussian::{fit_gaussian, gaussian_log_likelihood};
use logo_core::harness::{
    aggregate, run_sweep, write_results, DataSource, ModelId, NuSetting, SweepConfig, SweepData, SweepResult,
};
use logo_core::mfcf::{build_mfcf, BuildConfig};
use logo_core::observation::ObservationMatrix;
use logo_core::returns::{resample, ResamplePlan};
use logo_core::synth::Family;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn config(family: Family, p: usize, q_train: usize, clique_sizes: Vec<usize>, models: Vec<ModelId>) -> SweepConfig {
    SweepConfig {
        clique_sizes,
        models,
        nu: NuSetting::Fixed(3.0),
        tail_fraction: 0.05,
        em_max_iterations: 500,
        em_tolerance: 1e-6,
        kendall_transform: Default::default(),
        plan: ResamplePlan {
            n_resamples: 4,
            p_select: p,
            q_train,
            q_test: 50,
            series_with_replacement: false,
            seed: 99,
            jitter: 1e-6,
        },
        source: DataSource::Synthetic {
            family,
            p: Some(p),
            n_sectors: 3,
            params_from: None,
            covariance_seed: 4,
        },
        output: None,
        jobs: None,
        timing: false,
    }
}

fn run(cfg: &SweepConfig) -> Vec<SweepResult> {
    run_sweep(cfg, &SweepData::load(&cfg.source, None).unwrap()).unwrap()
}

#[test]
fn full_clique_has_all_edges() {
    let rows = run(&config(Family::Normal, 8, 60, vec![8], vec![ModelId::NormalPearson]));
    assert!(rows.iter().all(|r| r.is_ok() && r.n_edges == Some(28)));
}

#[test]
fn one_cell_one_row() {
    let mut cfg = config(Family::Normal, 6, 30, vec![3], vec![ModelId::StudentKendall]);
    cfg.plan.n_resamples = 1;
    let rows = run(&cfg);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].estimator, logo_core::dependence::Estimator::Kendall);
}

#[test]
fn splits_do_not_depend_on_the_model_set() {
    let alone = run(&config(Family::StudentT(3.0), 6, 40, vec![2, 4], vec![ModelId::NormalPearson]));
    let together = run(&config(Family::StudentT(3.0), 6, 40, vec![2, 4], ModelId::ALL.to_vec()));
    let filtered: Vec<_> = together.into_iter().filter(|r| r.model == ModelId::NormalPearson).collect();
    assert_eq!(alone, filtered);

    let cfg = config(Family::Normal, 6, 40, vec![2], vec![ModelId::NormalPearson]);
    let data = SweepData::load(&cfg.source, None).unwrap();
    assert_eq!(data.split(&cfg.plan, 2).unwrap(), data.split(&cfg.plan, 2).unwrap());
    assert_ne!(data.split(&cfg.plan, 1).unwrap(), data.split(&cfg.plan, 2).unwrap());
}

#[test]
fn failing_cells_become_error_rows() {
    let rows = run(&config(Family::Normal, 5, 30, vec![3, 8], vec![ModelId::NormalPearson]));
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().filter(|r| r.max_clique == 3).all(SweepResult::is_ok));
    for r in rows.iter().filter(|r| r.max_clique == 8) {
        assert!(r.status.starts_with("error:"), "{}", r.status);
        assert_eq!(r.ll_test_per_obs, None);
    }
}

#[test]
fn tail_estimate_failure_only_hits_student_models() {
    let mut cfg = config(Family::StudentT(3.0), 5, 40, vec![3], vec![ModelId::NormalPearson, ModelId::StudentPearson]);
    cfg.nu = NuSetting::Estimated(logo_core::harness::NuKeyword::TailEstimate);
    let rows = run(&cfg);
    for r in rows {
        assert_eq!(r.is_ok(), r.model == ModelId::NormalPearson, "{r:?}");
    }
}

// The Pearson Gaussian fit is the constrained maximum likelihood estimate,
// so its training likelihood cannot drop when the support grows. MFCF
// networks for R and R + 1 are usually but not always nested; the check
// runs on every nested pair.
#[test]
fn gaussian_train_likelihood_is_monotone_on_nested_networks() {
    let cfg = config(Family::StudentT(4.0), 12, 80, vec![2], vec![ModelId::NormalPearson]);
    let data = SweepData::load(&cfg.source, None).unwrap();
    let (mut nested, mut total) = (0, 0);
    for index in 0..40 {
        let (train, _) = data.split(&cfg.plan, index).unwrap();
        let corr = pearson_correlation(&train).unwrap();
        let fits: Vec<(EdgeSet, f64)> = (2..=12)
            .map(|r| {
                let forest = Arc::new(build_mfcf(&corr, &BuildConfig::new(r)).unwrap());
                let model = fit_gaussian(&train, forest.clone(), Estimator::Pearson, &Default::default()).unwrap();
                (forest.edge_set(), gaussian_log_likelihood(&train, &model).unwrap() / train.q() as f64)
            })
            .collect();
        for w in fits.windows(2) {
            total += 1;
            if w[0].0.iter().all(|&(i, j)| w[1].0.contains(i, j)) {
                nested += 1;
                assert!(w[1].1 >= w[0].1 - 1e-9, "resample {index}: {} < {}", w[1].1, w[0].1);
            }
        }
    }
    assert!(nested * 2 > total, "{nested} of {total} pairs nested");
}

#[test]
fn sparse_beats_full_on_short_samples() {
    let mut cfg = config(Family::Normal, 30, 40, vec![2, 3, 4, 6, 10, 30], vec![ModelId::NormalPearson]);
    cfg.plan.n_resamples = 5;
    let agg = aggregate(&run(&cfg));
    let full = agg.iter().find(|r| r.max_clique == 30).unwrap().mean_ll_test;
    assert!(agg.iter().any(|r| r.max_clique < 30 && r.mean_ll_test > full));
}

#[test]
fn rerun_is_byte_identical() {
    let cfg = config(Family::StudentT(3.0), 8, 40, vec![2, 5], ModelId::ALL.to_vec());
    let csv = || {
        let mut buf = Vec::new();
        write_results(&run(&cfg), &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(), csv());
}

#[test]
fn returns_source_with_duplicated_series() {
    let mut g = rng(5);
    let returns = observations(DMatrix::from_fn(200, 4, |_, _| g.random_range(-0.02..0.02)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("returns.csv");
    returns.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let mut cfg = config(Family::Normal, 4, 60, vec![2, 4, 8], ModelId::ALL.to_vec());
    cfg.source = DataSource::Returns { path: "returns.csv".into() };
    cfg.plan.p_select = 8;
    cfg.plan.series_with_replacement = true;
    let rows = run_sweep(&cfg, &SweepData::load(&cfg.source, Some(dir.path())).unwrap()).unwrap();
    assert_eq!(rows.len(), 4 * 3 * 6);
    assert!(rows.iter().all(|r| r.status == "ok" || r.status.starts_with("error:")));
    assert!(rows.iter().filter(|r| r.model == ModelId::NormalPearson).all(SweepResult::is_ok));
}

#[test]
fn default_jitter_keeps_rank_models_fitting_on_duplicates() {
    let mut g = rng(6);
    let returns = observations(DMatrix::from_fn(300, 4, |_, _| g.random_range(-0.02..0.02)));
    let dir = tempfile::tempdir().unwrap();
    returns.write_csv(std::fs::File::create(dir.path().join("r.csv")).unwrap()).unwrap();
    let cfg = SweepConfig::parse(
        r#"
clique_sizes = [2, 4, 8]
nu = 3.0
[plan]
n_resamples = 6
p_select = 8
q_train = 60
q_test = 60
[source]
kind = "returns"
path = "r.csv"
"#,
    )
    .unwrap();
    assert!(cfg.plan.series_with_replacement);
    let rows = run_sweep(&cfg, &SweepData::load(&cfg.source, Some(dir.path())).unwrap()).unwrap();
    assert_eq!(rows.len(), 6 * 3 * 6);
    for r in &rows {
        assert!(r.is_ok(), "{r:?}");
    }
}

fn pool(q: usize, p: usize, seed: u64) -> ObservationMatrix {
    let mut g = rng(seed);
    observations(DMatrix::from_fn(q, p, |_, _| g.random_range(-1.0..1.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn train_and_test_rows_are_disjoint(seed in any::<u64>(), q_train in 1usize..40, q_test in 0usize..40) {
        // Row s of the pool holds the value s in column 0.
        let q = 80;
        let mut data = pool(q, 3, seed).values().clone();
        for s in 0..q {
            data[(s, 0)] = s as f64;
        }
        let plan = ResamplePlan {
            n_resamples: 1,
            p_select: 3,
            q_train,
            q_test,
            series_with_replacement: false,
            seed,
            jitter: 1e-6,
        };
        let (train, test) = resample(&observations(data), &plan, 0).unwrap();
        let col = train.labels().iter().position(|l| l == "x0").unwrap();
        let mut rows: Vec<f64> = train.column(col);
        rows.extend(test.column(col));
        let n = rows.len();
        rows.sort_by(f64::total_cmp);
        rows.dedup();
        prop_assert_eq!(rows.len(), n);
        prop_assert_eq!(train.q(), q_train);
        prop_assert_eq!(test.q(), q_test);
    }

    #[test]
    fn duplicated_series_are_never_perfectly_correlated(seed in any::<u64>(), p_select in 2usize..12) {
        let plan = ResamplePlan {
            n_resamples: 1,
            p_select,
            q_train: 50,
            q_test: 10,
            series_with_replacement: true,
            seed,
            jitter: 1e-6,
        };
        let (train, _) = resample(&pool(100, 3, seed), &plan, 0).unwrap();
        let corr = pearson_correlation(&train).unwrap();
        for a in 0..p_select {
            for b in 0..a {
                prop_assert!(corr.get(a, b).abs() < 1.0);
            }
        }
    }
}
