//! Two-stage duration prediction: classify an incident as short or long
//! against a threshold, then estimate the duration of short incidents.
//! Long incidents are only flagged.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::booster::{BoosterError, LossKind};
use crate::data::{CategoryDictionary, FlowStore, IncidentRecord, RoadSection, SchemaPolicy};
use crate::flow::{build_features, FeatureSet, FeatureSetSpec, FlowError};
use crate::learner::{fit, Family, FittedModel, LearnError, LearnerSpec, ParamSet, Task};
use crate::metrics::{classification_scores, confusion, regression_scores, ClassificationScores, ConfusionCounts, Metric, MetricError, RegressionScores};
use crate::scalar::Scalar;
use crate::tuning::{nested_evaluate, random_search, FitCounter, NestedConfig, NestedReport, SearchResult, SearchSpace, TuningError};

pub const DEFAULT_THRESHOLD: f64 = 45.0;
pub const STEP3_NOTE: &str = "extended features required (Step 3)";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no short incidents to train the regressor on")]
    NoShortIncidents,
    #[error("no incidents to evaluate")]
    EmptyEvaluation,
    #[error("threshold must be positive")]
    InvalidThreshold,
    #[error("{stage}: {source}")]
    Learn {
        stage: &'static str,
        #[source]
        source: LearnError,
    },
    #[error("{stage}: {source}")]
    Tuning {
        stage: &'static str,
        #[source]
        source: TuningError,
    },
    #[error(transparent)]
    Features(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] BoosterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 1 (short) when `duration <= threshold`, else 0.
pub fn label(duration: f64, threshold: f64) -> u8 {
    u8::from(duration <= threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationClass {
    Short,
    Long,
}

impl DurationClass {
    pub fn name(self) -> &'static str {
        match self {
            DurationClass::Short => "short",
            DurationClass::Long => "long",
        }
    }
}

/// Search settings for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTuning {
    pub outer_k: usize,
    pub inner_k: usize,
    pub n_iter: usize,
    pub space: SearchSpace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLevelConfig {
    pub threshold: f64,
    pub classifier: LearnerSpec,
    pub regressor: LearnerSpec,
    pub regressor_features: FeatureSetSpec,
    /// `None` trains with the specs' fixed parameters.
    pub classifier_tuning: Option<StageTuning>,
    pub regressor_tuning: Option<StageTuning>,
    pub seed: u64,
}

impl Default for BiLevelConfig {
    /// Logistic booster on BFS, then a MAPE booster on FSC.
    fn default() -> Self {
        BiLevelConfig {
            threshold: DEFAULT_THRESHOLD,
            classifier: LearnerSpec::new(Family::Booster, Task::Classify),
            regressor: LearnerSpec::new(Family::Booster, Task::Regress).with_loss(LossKind::Mape),
            regressor_features: FeatureSetSpec::new(FeatureSet::Fsc),
            classifier_tuning: None,
            regressor_tuning: None,
            seed: 0,
        }
    }
}

/// Step 1 model; a training set with a single class yields a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage1<T> {
    Model(FittedModel<T>),
    Constant { label: u8 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLevelModel<T> {
    pub threshold: f64,
    pub classifier: Stage1<T>,
    pub regressor: FittedModel<T>,
    pub regressor_features: FeatureSetSpec,
    pub dictionary: CategoryDictionary,
    /// Free-form settings stored in the bundle manifest.
    pub settings: BTreeMap<String, String>,
}

impl<T> BiLevelModel<T> {
    pub fn classifier_features(&self) -> FeatureSetSpec {
        FeatureSetSpec::new(FeatureSet::Bfs)
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.classifier, Stage1::Constant { .. })
    }
}

/// Tuning outputs gathered while fitting.
#[derive(Clone, Debug, Default)]
pub struct FitDiagnostics<T> {
    pub classifier_nested: Option<NestedReport<T>>,
    pub regressor_nested: Option<NestedReport<T>>,
    pub classifier_search: Option<SearchResult<T>>,
    pub regressor_search: Option<SearchResult<T>>,
    pub classifier_inner_fits: usize,
    pub regressor_inner_fits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLevelOutcome {
    pub id: String,
    pub predicted_class: DurationClass,
    /// Present exactly when the class is short.
    pub duration: Option<f64>,
    pub step3: bool,
}

fn tune_stage<T: Scalar>(
    stage: &'static str,
    spec: &LearnerSpec,
    matrix: &crate::data::FeatureMatrix<T>,
    targets: &[T],
    tuning: &StageTuning,
    seed: u64,
) -> Result<(ParamSet, NestedReport<T>, SearchResult<T>, usize), PipelineError> {
    let err = |source| PipelineError::Tuning { stage, source };
    let objective = crate::tuning::default_objective(spec.task);
    let metrics = match spec.task {
        Task::Classify => Metric::CLASSIFICATION.to_vec(),
        Task::Regress => Metric::REGRESSION.to_vec(),
    };
    let nested_cfg = NestedConfig {
        outer_k: tuning.outer_k,
        inner_k: tuning.inner_k,
        n_iter: tuning.n_iter,
        space: tuning.space.clone(),
        metrics,
        objective,
        seed,
    };
    let counter = FitCounter::new();
    let nested = nested_evaluate(spec, matrix, targets, &nested_cfg, Some(&counter)).map_err(err)?;
    let search = random_search(
        &tuning.space,
        tuning.n_iter,
        spec,
        matrix,
        targets,
        tuning.inner_k,
        objective,
        seed.wrapping_add(7),
        None,
    )
    .map_err(err)?;
    Ok((search.best_params.clone(), nested, search, counter.get()))
}

/// Trains both stages on `incidents` (already outlier-filtered). The
/// classifier sees BFS columns only; the regressor is trained on the truly
/// short incidents with the configured feature set.
pub fn fit_bilevel<T: Scalar>(
    incidents: &[IncidentRecord],
    sections: &[RoadSection],
    flows: &FlowStore,
    config: &BiLevelConfig,
) -> Result<(BiLevelModel<T>, FitDiagnostics<T>), PipelineError> {
    if !(config.threshold > 0.0) {
        return Err(PipelineError::InvalidThreshold);
    }
    let mut diag = FitDiagnostics::default();
    let (bfs, dictionary) = build_features::<T>(
        incidents,
        sections,
        flows,
        &FeatureSetSpec::new(FeatureSet::Bfs),
        SchemaPolicy::Learn,
    )?;
    let labels: Vec<T> = incidents.iter().map(|r| T::of(label(r.duration_min, config.threshold) as f64)).collect();
    let n_short = labels.iter().filter(|&&l| l == T::one()).count();
    if n_short == 0 {
        return Err(PipelineError::NoShortIncidents);
    }

    let classifier = if n_short == incidents.len() {
        Stage1::Constant { label: 1 }
    } else {
        let spec = &config.classifier;
        let params = match &config.classifier_tuning {
            None => ParamSet::new(),
            Some(t) => {
                let (p, nested, search, fits) = tune_stage("classifier", spec, &bfs, &labels, t, config.seed)?;
                diag.classifier_nested = Some(nested);
                diag.classifier_search = Some(search);
                diag.classifier_inner_fits = fits;
                p
            }
        };
        let model = fit(spec, &bfs, &labels, &params, config.seed)
            .map_err(|source| PipelineError::Learn { stage: "classifier", source })?;
        Stage1::Model(model.with_dictionary(dictionary.clone()))
    };

    let short: Vec<IncidentRecord> = incidents
        .iter()
        .filter(|r| label(r.duration_min, config.threshold) == 1)
        .cloned()
        .collect();
    let (reg_m, _) = build_features::<T>(
        &short,
        sections,
        flows,
        &config.regressor_features,
        SchemaPolicy::Frozen(&dictionary),
    )?;
    let y = reg_m.target().to_vec();
    let spec = &config.regressor;
    let params = match &config.regressor_tuning {
        None => ParamSet::new(),
        Some(t) => {
            let (p, nested, search, fits) =
                tune_stage("regressor", spec, &reg_m, &y, t, config.seed.wrapping_add(1))?;
            diag.regressor_nested = Some(nested);
            diag.regressor_search = Some(search);
            diag.regressor_inner_fits = fits;
            p
        }
    };
    let regressor = fit(spec, &reg_m, &y, &params, config.seed.wrapping_add(1))
        .map_err(|source| PipelineError::Learn { stage: "regressor", source })?
        .with_dictionary(dictionary.clone());

    Ok((
        BiLevelModel {
            threshold: config.threshold,
            classifier,
            regressor,
            regressor_features: config.regressor_features,
            dictionary,
            settings: BTreeMap::new(),
        },
        diag,
    ))
}

/// Step-1 labels and Step-2 estimates for every incident (estimates are
/// computed for all rows; routing decides which are reported).
fn stage_outputs<T: Scalar>(
    model: &BiLevelModel<T>,
    incidents: &[IncidentRecord],
    sections: &[RoadSection],
    flows: &FlowStore,
) -> Result<(Vec<u8>, Vec<f64>), PipelineError> {
    let classes = match &model.classifier {
        Stage1::Constant { label } => vec![*label; incidents.len()],
        Stage1::Model(m) => {
            let (bfs, _) = build_features::<T>(
                incidents,
                sections,
                flows,
                &model.classifier_features(),
                SchemaPolicy::Frozen(&model.dictionary),
            )?;
            m.predict(&bfs)?.into_iter().map(|v| u8::from(v == T::one())).collect()
        }
    };
    let (reg, _) = build_features::<T>(
        incidents,
        sections,
        flows,
        &model.regressor_features,
        SchemaPolicy::Frozen(&model.dictionary),
    )?;
    let est = model.regressor.predict(&reg)?.into_iter().map(|v| v.as_f64()).collect();
    Ok((classes, est))
}

pub fn predict_bilevel_many<T: Scalar>(
    model: &BiLevelModel<T>,
    incidents: &[IncidentRecord],
    sections: &[RoadSection],
    flows: &FlowStore,
) -> Result<Vec<BiLevelOutcome>, PipelineError> {
    if incidents.is_empty() {
        return Ok(Vec::new());
    }
    let (classes, est) = stage_outputs(model, incidents, sections, flows)?;
    Ok(incidents
        .iter()
        .zip(classes.iter().zip(est))
        .map(|(r, (&c, d))| {
            let short = c == 1;
            BiLevelOutcome {
                id: r.id.clone(),
                predicted_class: if short { DurationClass::Short } else { DurationClass::Long },
                duration: short.then_some(d),
                step3: !short,
            }
        })
        .collect())
}

pub fn predict_bilevel<T: Scalar>(
    model: &BiLevelModel<T>,
    incident: &IncidentRecord,
    sections: &[RoadSection],
    flows: &FlowStore,
) -> Result<BiLevelOutcome, PipelineError> {
    let mut v = predict_bilevel_many(model, std::slice::from_ref(incident), sections, flows)?;
    Ok(v.remove(0))
}

pub fn write_predictions<W: Write>(outcomes: &[BiLevelOutcome], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "class", "duration", "step3_flag"])?;
    for o in outcomes {
        w.write_record([
            o.id.as_str(),
            o.predicted_class.name(),
            &o.duration.map(|d| d.to_string()).unwrap_or_default(),
            if o.step3 { STEP3_NOTE } else { "" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Counts of (true class, predicted class).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingCells {
    pub short_as_short: usize,
    pub short_as_long: usize,
    pub long_as_short: usize,
    pub long_as_long: usize,
}

impl RoutingCells {
    pub fn total(&self) -> usize {
        self.short_as_short + self.short_as_long + self.long_as_short + self.long_as_long
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLevelReport {
    pub n: usize,
    pub confusion: ConfusionCounts,
    pub classification: ClassificationScores<f64>,
    pub cells: RoutingCells,
    /// Regression scores on incidents that are short and classified short;
    /// `None` when that set is empty.
    pub conditioned: Option<RegressionScores<f64>>,
    /// Regression scores on every truly short incident.
    pub unconditioned: Option<RegressionScores<f64>>,
}

pub fn evaluate_bilevel<T: Scalar>(
    model: &BiLevelModel<T>,
    incidents: &[IncidentRecord],
    sections: &[RoadSection],
    flows: &FlowStore,
) -> Result<BiLevelReport, PipelineError> {
    if incidents.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    let (classes, est) = stage_outputs(model, incidents, sections, flows)?;
    let truth: Vec<f64> = incidents.iter().map(|r| label(r.duration_min, model.threshold) as f64).collect();
    let pred: Vec<f64> = classes.iter().map(|&c| c as f64).collect();
    let counts = confusion(&truth, &pred)?;
    let cells = RoutingCells {
        short_as_short: counts.tp,
        short_as_long: counts.fn_,
        long_as_short: counts.fp,
        long_as_long: counts.tn,
    };
    let pick = |keep: &dyn Fn(usize) -> bool| -> (Vec<f64>, Vec<f64>) {
        (0..incidents.len())
            .filter(|&i| keep(i))
            .map(|i| (incidents[i].duration_min, est[i]))
            .unzip()
    };
    let score = |(y, p): (Vec<f64>, Vec<f64>)| -> Result<Option<RegressionScores<f64>>, PipelineError> {
        if y.is_empty() {
            Ok(None)
        } else {
            Ok(Some(regression_scores(&y, &p)?))
        }
    };
    Ok(BiLevelReport {
        n: incidents.len(),
        confusion: counts,
        classification: classification_scores(&counts)?,
        cells,
        conditioned: score(pick(&|i| truth[i] == 1.0 && classes[i] == 1))?,
        unconditioned: score(pick(&|i| truth[i] == 1.0))?,
    })
}

impl BiLevelReport {
    /// `metric, value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        let c = &self.classification;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let rows: Vec<(&str, String)> = vec![
            ("n", self.n.to_string()),
            ("accuracy", c.accuracy.to_string()),
            ("precision", c.precision.to_string()),
            ("recall", c.recall.to_string()),
            ("f1", c.f1.to_string()),
            ("precision_undefined", c.precision_undefined.to_string()),
            ("recall_undefined", c.recall_undefined.to_string()),
            ("short_as_short", self.cells.short_as_short.to_string()),
            ("short_as_long", self.cells.short_as_long.to_string()),
            ("long_as_short", self.cells.long_as_short.to_string()),
            ("long_as_long", self.cells.long_as_long.to_string()),
            ("conditioned_n", self.conditioned.as_ref().map_or(0, |s| s.n).to_string()),
            ("conditioned_mape", opt(self.conditioned.as_ref().map(|s| s.mape))),
            ("conditioned_r2", opt(self.conditioned.as_ref().and_then(|s| s.r2))),
            ("unconditioned_n", self.unconditioned.as_ref().map_or(0, |s| s.n).to_string()),
            ("unconditioned_mape", opt(self.unconditioned.as_ref().map(|s| s.mape))),
            ("unconditioned_r2", opt(self.unconditioned.as_ref().and_then(|s| s.r2))),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    threshold: f64,
    classifier_features: FeatureSetSpec,
    regressor_features: FeatureSetSpec,
    constant_class: Option<u8>,
    dictionary: CategoryDictionary,
    settings: BTreeMap<String, String>,
}

pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const REGRESSOR_FILE: &str = "regressor.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes classifier.json (absent for a constant classifier), regressor.json
/// and manifest.json into `dir`, creating it if needed.
pub fn save_bundle<T: Scalar>(model: &BiLevelModel<T>, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let constant_class = match &model.classifier {
        Stage1::Model(m) => {
            fs::write(dir.join(CLASSIFIER_FILE), m.to_json())?;
            None
        }
        Stage1::Constant { label } => Some(*label),
    };
    fs::write(dir.join(REGRESSOR_FILE), model.regressor.to_json())?;
    let manifest = Manifest {
        threshold: model.threshold,
        classifier_features: model.classifier_features(),
        regressor_features: model.regressor_features,
        constant_class,
        dictionary: model.dictionary.clone(),
        settings: model.settings.clone(),
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

pub fn load_bundle<T: Scalar>(dir: &Path) -> Result<BiLevelModel<T>, PipelineError> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name)).map_err(|e| PipelineError::Bundle(format!("{}: {e}", dir.join(name).display())))
    };
    let manifest: Manifest =
        serde_json::from_str(&read(MANIFEST_FILE)?).map_err(|e| PipelineError::Bundle(format!("{MANIFEST_FILE}: {e}")))?;
    let classifier = match manifest.constant_class {
        Some(label) => Stage1::Constant { label },
        None => Stage1::Model(FittedModel::from_json(&read(CLASSIFIER_FILE)?)?),
    };
    let regressor = FittedModel::from_json(&read(REGRESSOR_FILE)?)?;
    Ok(BiLevelModel {
        threshold: manifest.threshold,
        classifier,
        regressor,
        regressor_features: manifest.regressor_features,
        dictionary: manifest.dictionary,
        settings: manifest.settings,
    })
}
