use std::collections::BTreeMap;

use incident_core::baselines::{forest_fit, MedianImputer, Task};
use incident_core::booster::{train, HyperParams, LossKind, TrainOptions, TreeEnsemble};
use incident_core::data::{filter_outliers, Cell, FeatureMatrix, IncidentRecord, SchemaPolicy};
use incident_core::flow::{build_features, dv_sensitivity, FeatureSet, FeatureSetSpec};
use incident_core::learner::{fit, Family, FittedModel, LearnerSpec};
use incident_core::metrics::Metric;
use incident_core::shapley::{exact_shapley, sample_background, Predictor, ValueFunction};
use incident_core::synth::{generate, Dataset, GeneratorConfig};
use incident_core::tuning::{
    cross_validate, kfold, nested_evaluate, random_search, CvSettings, Distribution, NestedConfig, SearchSpace,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bfs(d: &Dataset, incidents: &[IncidentRecord]) -> FeatureMatrix<f64> {
    let store = d.flow_store();
    build_features(incidents, &d.sections, &store, &FeatureSetSpec::new(FeatureSet::Bfs), SchemaPolicy::Learn)
        .unwrap()
        .0
}

fn short_incidents(d: &Dataset) -> Vec<IncidentRecord> {
    filter_outliers(&d.incidents, 5.0).into_iter().filter(|r| r.duration_min <= 45.0).collect()
}

#[test]
fn forest_beats_a_single_tree_out_of_bag() {
    let mut wins = 0;
    for seed in 0..10 {
        let d = generate(&GeneratorConfig::default().with_seed(seed)).unwrap();
        let m = bfs(&d, &filter_outliers(&d.incidents, 5.0));
        let y: Vec<f64> = m.target().iter().map(|v| v.ln()).collect();
        let params = HyperParams {
            max_depth: 8,
            min_child_weight: 1.0,
            reg_lambda: 0.0,
            colsample_bytree: 0.6,
            ..HyperParams::default()
        };
        let one = forest_fit(&m, &y, 1, &params, seed, Task::Regress).unwrap();
        let many = forest_fit(&m, &y, 100, &params, seed, Task::Regress).unwrap();
        wins += (many.oob_error.unwrap() < one.oob_error.unwrap()) as usize;
    }
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn search_picks_the_dominating_configuration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<Vec<Cell<f64>>> = (0..80).map(|_| (0..3).map(|_| Some(rng.random_range(-1.0..1.0))).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| 4.0 * r[0].unwrap() - 2.0 * r[1].unwrap() + rng.random_range(-0.2..0.2)).collect();
    let m = FeatureMatrix::from_rows(&["a", "b", "c"], &rows).unwrap();
    let spec = LearnerSpec::new(Family::Booster, Task::Regress)
        .with_param("learning_rate", 1.0)
        .with_param("max_depth", 3.0);
    // n_rounds is either 0 (the mean) or 1 full-step tree
    let space = SearchSpace::new().with("n_rounds", Distribution::Int { lo: 0, hi: 1 });
    let mut hits = 0;
    for seed in 0..100 {
        let r = random_search(&space, 8, &spec, &m, &y, 3, Metric::R2, seed, None).unwrap();
        hits += (r.best_params["n_rounds"] == 1.0) as usize;
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn fewer_search_draws_do_not_help() {
    let d = generate(&GeneratorConfig::default().with_seed(4)).unwrap();
    let m = bfs(&d, &short_incidents(&d));
    let y = m.target().to_vec();
    let spec = LearnerSpec::new(Family::Knn, Task::Regress);
    let run = |n_iter| {
        let cfg = NestedConfig {
            outer_k: 5,
            inner_k: 3,
            n_iter,
            space: SearchSpace::default_for(Family::Knn),
            metrics: vec![Metric::Mape],
            objective: Metric::Mape,
            seed: 4,
        };
        let s = nested_evaluate(&spec, &m, &y, &cfg, None).unwrap();
        let t = s.test_summary(Metric::Mape).unwrap();
        (t.mean.unwrap(), t.std.unwrap())
    };
    let (many, many_std) = run(200);
    let (one, _) = run(1);
    assert!(one >= many - many_std, "n_iter 1: {one}, n_iter 200: {many} ± {many_std}");
}

#[test]
fn target_leak_changes_scores_but_not_folds_or_imputation() {
    let d = generate(&GeneratorConfig::default().with_seed(6)).unwrap();
    let m = bfs(&d, &filter_outliers(&d.incidents, 5.0));
    let y = m.target().to_vec();
    let leak_col = FeatureMatrix::from_rows(&["leak"], &y.iter().map(|&v| vec![Some(v)]).collect::<Vec<_>>()).unwrap();
    let leaky = m.hstack(&leak_col).unwrap().with_target(y.clone()).unwrap();

    let plan = kfold(y.len(), 5, 6).unwrap();
    assert_eq!(plan, kfold(y.len(), 5, 6).unwrap());
    let spec = LearnerSpec::new(Family::Linear, Task::Regress).with_param("ridge_alpha", 0.0);
    let settings = CvSettings::new(&[Metric::R2]);
    let clean = cross_validate(&spec, &m, &y, &plan, &settings, None).unwrap();
    let leaked = cross_validate(&spec, &leaky, &y, &plan, &settings, None).unwrap();
    let train_r2 = leaked.train_summary(Metric::R2).unwrap().mean.unwrap();
    assert!(train_r2 > 1.0 - 1e-9, "{train_r2}");
    assert!(clean.train_summary(Metric::R2).unwrap().mean.unwrap() < 0.99);

    for f in 0..5 {
        let rows = plan.train_rows(f);
        let a = MedianImputer::fit(&m.select_rows(&rows));
        let b = MedianImputer::fit(&leaky.select_rows(&rows));
        assert_eq!(a.medians[..], b.medians[..m.n_cols()]);
    }
}

#[test]
fn flat_flows_leave_dv_without_signal() {
    let cfg = GeneratorConfig {
        flat_flows: true,
        ..GeneratorConfig::default()
    };
    let d = generate(&cfg.with_seed(8)).unwrap();
    let store = d.flow_store();
    let short = short_incidents(&d);
    let spec = LearnerSpec::new(Family::Booster, Task::Regress)
        .with_loss(LossKind::Mape)
        .with_param("max_depth", 3.0)
        .with_param("learning_rate", 0.1);
    let nested = NestedConfig {
        outer_k: 5,
        inner_k: 2,
        n_iter: 1,
        space: SearchSpace::point(&BTreeMap::new()),
        metrics: vec![Metric::Mape],
        objective: Metric::Mape,
        seed: 8,
    };
    let rows = dv_sensitivity(&short, &d.sections, &store, &[250.0, 500.0, 1000.0], &spec, &nested).unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.mape_mean).collect();
    let spread = means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min);
    let std = rows.iter().map(|r| r.mape_std).fold(f64::MAX, f64::min);
    assert!(spread < std, "means {means:?}, smallest std {std}");
}

#[test]
fn fsc_is_the_sum_of_fsb_columns() {
    let d = generate(&GeneratorConfig::default().with_seed(1)).unwrap();
    let store = d.flow_store();
    let incidents = &d.incidents[..60];
    let build = |fs| build_features::<f64>(incidents, &d.sections, &store, &FeatureSetSpec::new(fs), SchemaPolicy::Learn).unwrap().0;
    let (b, c) = (build(FeatureSet::Fsb), build(FeatureSet::Fsc));
    for (prefix, name) in [("trf", "trf_top5_sum"), ("tfh", "tfh_top5_sum"), ("tfr", "tfr_top5_sum")] {
        let sum_col = c.column_index(name).unwrap();
        let parts: Vec<usize> = b
            .column_names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(&format!("{prefix}_near")))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(parts.len(), 5, "{:?}", b.column_names());
        for r in 0..b.n_rows() {
            let present: Vec<f64> = parts.iter().filter_map(|&j| b.get(r, j)).collect();
            match c.get(r, sum_col) {
                Some(v) => assert!((v - present.iter().sum::<f64>()).abs() < 1e-9),
                None => assert!(present.is_empty()),
            }
        }
    }
}

#[test]
fn booster_explanation_is_efficient() {
    let d = generate(&GeneratorConfig::default().with_seed(3)).unwrap();
    let m = bfs(&d, &filter_outliers(&d.incidents, 5.0));
    let model = fit(&LearnerSpec::new(Family::Booster, Task::Regress).with_param("n_rounds", 40.0), &m, m.target(), &BTreeMap::new(), 3).unwrap();
    // exact enumeration on a narrow slice of the columns
    let cols: Vec<usize> = (0..10).collect();
    let narrow = m.select_columns(&cols);
    let wide_row = m.row(11).to_vec();
    let inner = &model;
    let f = incident_core::shapley::FnPredictor(move |row: &[Cell<f64>]| {
        let mut full = wide_row.clone();
        full[..10].copy_from_slice(row);
        inner.predict_row(&full)
    });
    let background = sample_background(&narrow, 20, 3);
    let vf = ValueFunction::new(&f, &background, narrow.row(11)).unwrap();
    let r = exact_shapley(&vf).unwrap();
    let total = r.base_value + r.phi.iter().sum::<f64>();
    assert!((total - f.predict_row(narrow.row(11))).abs() < 1e-9);
    assert!((r.prediction - model.predict_row(m.row(11))).abs() < 1e-9);
}

#[test]
fn fifty_tree_ensemble_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let rows: Vec<Vec<Cell<f64>>> = (0..300)
        .map(|_| (0..4).map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_range(-3.0..3.0)) }).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0].unwrap_or(1.0).sin() + r[2].unwrap_or(0.0) * 0.3).collect();
    let m = FeatureMatrix::from_rows(&["a", "b", "c", "d"], &rows).unwrap();
    let params = HyperParams {
        n_rounds: 50,
        ..HyperParams::default()
    };
    let e = train(&m, &y, &TrainOptions::new(LossKind::SquaredError, params)).unwrap();
    let back = TreeEnsemble::<f64>::from_json(&e.to_json()).unwrap();
    let probe: Vec<Vec<Cell<f64>>> = (0..100)
        .map(|_| (0..4).map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_range(-4.0..4.0)) }).collect())
        .collect();
    for row in &probe {
        assert_eq!(e.predict_row(row).to_bits(), back.predict_row(row).to_bits());
    }

    let spec = LearnerSpec::new(Family::Forest, Task::Regress).with_param("n_trees", 20.0);
    let model = fit(&spec, &m, &y, &BTreeMap::new(), 1).unwrap();
    let back = FittedModel::<f64>::from_json(&model.to_json()).unwrap();
    for row in &probe {
        assert_eq!(model.predict_row(row).to_bits(), back.predict_row(row).to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boosting_never_raises_training_loss_for_squared_error(seed in 0u64..1000, rounds in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Cell<f64>>> = (0..40).map(|_| (0..3).map(|_| Some(rng.random_range(-2.0..2.0))).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0].unwrap() * r[1].unwrap() + rng.random_range(-0.5..0.5)).collect();
        let m = FeatureMatrix::from_rows(&["a", "b", "c"], &rows).unwrap();
        let params = HyperParams { n_rounds: rounds, reg_lambda: 1.0, learning_rate: 0.3, ..HyperParams::default() };
        let e = train(&m, &y, &TrainOptions::new(LossKind::SquaredError, params)).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=rounds {
            let p = e.truncated(k).predict(&m).unwrap();
            let sse: f64 = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(sse <= last + 1e-9);
            last = sse;
        }
    }

    #[test]
    fn f32_and_f64_agree_on_small_problems(seed in 0u64..1000) {
        // continuous inputs so that no two candidate splits tie
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Cell<f64>>> = (0..30).map(|_| (0..2).map(|_| Some(rng.random_range(0.0..8.0f32) as f64)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0].unwrap() > 4.0 { 10.0 } else { -10.0 } + r[1].unwrap()).collect();
        let m = FeatureMatrix::from_rows(&["a", "b"], &rows).unwrap();
        // one round: later rounds fit small residuals whose near-tied splits
        // may legitimately resolve differently in single precision
        let params = HyperParams { n_rounds: 1, max_depth: 2, ..HyperParams::default() };
        let a = train(&m, &y, &TrainOptions::new(LossKind::SquaredError, params.clone())).unwrap();
        let m32 = m.cast::<f32>();
        let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
        let b = train(&m32, &y32, &TrainOptions::new(LossKind::SquaredError, params)).unwrap();
        for (r64, r32) in m.rows().zip(m32.rows()) {
            prop_assert!((a.predict_row(r64) - b.predict_row(r32) as f64).abs() < 1e-3);
        }
    }
}
