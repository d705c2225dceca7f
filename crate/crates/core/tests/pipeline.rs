use incident_core::booster::LossKind;
use incident_core::data::filter_outliers;
use incident_core::flow::flow_column_names;
use incident_core::pipeline::{
    evaluate_bilevel, fit_bilevel, label, predict_bilevel_many, BiLevelConfig, DurationClass, Stage1,
};
use incident_core::synth::{generate, Dataset, GeneratorConfig};
use proptest::prelude::*;

fn small(seed: u64) -> Dataset {
    let cfg = GeneratorConfig {
        n_incidents: 260,
        n_sections: 60,
        n_plain_sections: 5,
        outlier_count: 6,
        ..GeneratorConfig::default()
    };
    generate(&cfg.with_seed(seed)).unwrap()
}

fn quick() -> BiLevelConfig {
    let d = BiLevelConfig::default();
    BiLevelConfig {
        classifier: d.classifier.clone().with_param("n_rounds", 20.0),
        regressor: d.regressor.clone().with_param("n_rounds", 20.0),
        ..d
    }
}

#[test]
fn routing_invariant_over_200_incidents() {
    let d = small(1);
    let store = d.flow_store();
    let incidents = filter_outliers(&d.incidents, 5.0);
    let (model, _) = fit_bilevel::<f64>(&incidents, &d.sections, &store, &quick()).unwrap();
    let test = &incidents[..200];
    let outcomes = predict_bilevel_many(&model, test, &d.sections, &store).unwrap();
    assert_eq!(outcomes.len(), 200);
    let mut short = 0;
    for (o, r) in outcomes.iter().zip(test) {
        assert_eq!(o.id, r.id);
        match o.predicted_class {
            DurationClass::Short => {
                short += 1;
                assert!(o.duration.is_some_and(f64::is_finite) && !o.step3);
            }
            DurationClass::Long => assert!(o.duration.is_none() && o.step3),
        }
    }
    assert!(short > 0 && short < 200, "{short} short");

    let report = evaluate_bilevel(&model, test, &d.sections, &store).unwrap();
    assert_eq!(report.cells.total(), 200);
    assert_eq!(report.cells.short_as_short, report.confusion.tp);
}

#[test]
fn classifier_never_sees_flow_columns() {
    let d = small(2);
    let store = d.flow_store();
    let (model, _) = fit_bilevel::<f64>(&d.incidents, &d.sections, &store, &quick()).unwrap();
    let flow_names = flow_column_names(&model.regressor_features, &d.sections);
    assert!(!flow_names.is_empty());
    let Stage1::Model(classifier) = &model.classifier else {
        panic!("both classes are present")
    };
    for c in classifier.schema() {
        assert!(!flow_names.contains(&c.name), "classifier reads {}", c.name);
    }
    let regressor_names: Vec<&str> = model.regressor.schema().iter().map(|c| c.name.as_str()).collect();
    assert!(flow_names.iter().all(|n| regressor_names.contains(&n.as_str())));
}

#[test]
fn always_long_classifier_reports_empty_regression() {
    let d = small(3);
    let store = d.flow_store();
    let (mut model, _) = fit_bilevel::<f64>(&d.incidents, &d.sections, &store, &quick()).unwrap();
    model.classifier = Stage1::Constant { label: 0 };
    let report = evaluate_bilevel(&model, &d.incidents, &d.sections, &store).unwrap();
    assert!(report.conditioned.is_none());
    assert_eq!(report.cells.short_as_short + report.cells.long_as_short, 0);
    assert_eq!(report.cells.total(), d.incidents.len());
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert!(!csv.is_empty());
}

#[test]
fn mape_regressor_gives_positive_estimates() {
    let d = small(4);
    let store = d.flow_store();
    let cfg = BiLevelConfig {
        regressor: quick().regressor.with_loss(LossKind::Mape),
        ..quick()
    };
    let (model, _) = fit_bilevel::<f64>(&d.incidents, &d.sections, &store, &cfg).unwrap();
    let outcomes = predict_bilevel_many(&model, &d.incidents, &d.sections, &store).unwrap();
    assert!(outcomes.iter().filter_map(|o| o.duration).all(|v| v > 0.0));
}

proptest! {
    #[test]
    fn raising_the_threshold_never_unlabels_short(d in 0.0f64..1000.0, t in 0.1f64..500.0, bump in 0.0f64..500.0) {
        prop_assert!(label(d, t) <= label(d, t + bump));
        prop_assert_eq!(label(d, t), label(d, t));
    }
}
