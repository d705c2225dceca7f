//! Uniform fit/predict interface over every learner family.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    forest_fit_with, knn_fit, linear_fit, BaselineError, ForestModel, ForestOptions, KnnModel, LinearModel, Link,
};
pub use crate::baselines::Task;
use crate::booster::{train, BoosterError, HyperParams, LossKind, TargetTransform, TrainOptions, TreeEnsemble};
use crate::data::{CategoryDictionary, FeatureMatrix};
use crate::scalar::Scalar;

/// Named numeric parameters; integer parameters are rounded when applied.
pub type ParamSet = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Regularized second-order boosting.
    Booster,
    /// The booster with gamma and reg_lambda pinned to 0.
    Gbdt,
    Forest,
    Knn,
    /// Ridge regression or logistic regression.
    Linear,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Booster, Family::Gbdt, Family::Forest, Family::Knn, Family::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Family::Booster => "booster",
            Family::Gbdt => "gbdt",
            Family::Forest => "forest",
            Family::Knn => "knn",
            Family::Linear => "linear",
        }
    }

    /// Parameter names the family reads.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Booster => &HyperParams::NAMES,
            Family::Gbdt => &[
                "max_depth",
                "learning_rate",
                "min_child_weight",
                "subsample",
                "colsample_bytree",
                "scale_pos_weight",
                "n_rounds",
            ],
            Family::Forest => &["n_trees", "max_depth", "min_child_weight", "colsample_bytree"],
            Family::Knn => &["k"],
            Family::Linear => &["ridge_alpha"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "booster" | "xgboost" | "xgb" => Ok(Family::Booster),
            "gbdt" => Ok(Family::Gbdt),
            "forest" | "rf" => Ok(Family::Forest),
            "knn" => Ok(Family::Knn),
            "linear" | "lr" => Ok(Family::Linear),
            _ => Err(format!("unknown learner family `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Booster(#[from] BoosterError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// What to fit: family, task, loss and fixed parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    pub task: Task,
    /// Boosting loss; `None` picks logistic for classification and squared
    /// error for regression.
    pub loss: Option<LossKind>,
    /// Regression target transform (ignored for classification).
    pub transform: TargetTransform,
    /// Overrides of the family defaults.
    pub params: ParamSet,
}

impl LearnerSpec {
    pub fn new(family: Family, task: Task) -> Self {
        LearnerSpec {
            family,
            task,
            loss: None,
            transform: TargetTransform::Identity,
            params: ParamSet::new(),
        }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = Some(loss);
        self
    }

    pub fn with_transform(mut self, transform: TargetTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(match self.task {
            Task::Classify => LossKind::Logistic,
            Task::Regress => LossKind::SquaredError,
        })
    }

    fn transform_for_task(&self) -> TargetTransform {
        match self.task {
            Task::Classify => TargetTransform::Identity,
            Task::Regress => self.transform,
        }
    }

    /// Family defaults overridden by the spec's parameters, then by `extra`.
    pub fn effective_params(&self, extra: &ParamSet) -> ParamSet {
        let mut p = default_params(self.family);
        p.extend(self.params.iter().map(|(k, v)| (k.clone(), *v)));
        p.extend(extra.iter().map(|(k, v)| (k.clone(), *v)));
        p
    }

    pub fn hyper_params(&self, extra: &ParamSet) -> Result<HyperParams, LearnError> {
        hyper_params(self.family, &self.effective_params(extra))
    }
}

/// Defaults: XGBoost-style values for the boosters, 100 trees of depth 12
/// for the forest, k = 5, ridge alpha = 1.
pub fn default_params(family: Family) -> ParamSet {
    let mut p = ParamSet::new();
    match family {
        Family::Booster | Family::Gbdt => {
            let h = HyperParams::default();
            for name in family.param_names() {
                p.insert(name.to_string(), h.get(name).expect("known name"));
            }
        }
        Family::Forest => {
            p.insert("n_trees".into(), 100.0);
            p.insert("max_depth".into(), 12.0);
            p.insert("min_child_weight".into(), 1.0);
            p.insert("colsample_bytree".into(), 0.6);
        }
        Family::Knn => {
            p.insert("k".into(), 5.0);
        }
        Family::Linear => {
            p.insert("ridge_alpha".into(), 1.0);
        }
    }
    p
}

fn hyper_params(family: Family, params: &ParamSet) -> Result<HyperParams, LearnError> {
    let mut h = HyperParams::default();
    for (name, &value) in params {
        if !family.param_names().contains(&name.as_str()) {
            return Err(LearnError::InvalidParam(format!("`{name}` is not a {family} parameter")));
        }
        if h.get(name).is_some() {
            h.set(name, value)?;
        }
    }
    match family {
        Family::Gbdt => {
            h.gamma = 0.0;
            h.reg_lambda = 0.0;
        }
        Family::Forest => {
            h.gamma = 0.0;
            h.reg_lambda = 0.0;
        }
        _ => {}
    }
    Ok(h)
}

fn integer(params: &ParamSet, name: &str) -> Result<usize, LearnError> {
    let v = params[name];
    if !(v.is_finite() && v >= 0.0) {
        return Err(LearnError::InvalidParam(format!("{name} = {v}")));
    }
    Ok(v.round() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody<T> {
    Booster(TreeEnsemble<T>),
    Forest(ForestModel<T>),
    Knn(KnnModel<T>),
    Linear(LinearModel<T>),
}

/// A trained model of any family, tagged for its model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel<T> {
    pub family: Family,
    pub task: Task,
    /// Applied around non-boosting families; the booster applies its own.
    pub transform: TargetTransform,
    pub params: ParamSet,
    #[serde(default)]
    pub dictionary: Option<CategoryDictionary>,
    pub body: ModelBody<T>,
}

/// Fits `spec` with `extra` parameters on `matrix` against `targets`
/// (labels in {0, 1} for classification).
pub fn fit<T: Scalar>(
    spec: &LearnerSpec,
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    extra: &ParamSet,
    seed: u64,
) -> Result<FittedModel<T>, LearnError> {
    let params = spec.effective_params(extra);
    let transform = spec.transform_for_task();
    let wrapped_targets = |t: &[T]| -> Result<Vec<T>, LearnError> {
        match transform {
            TargetTransform::Identity => Ok(t.to_vec()),
            TargetTransform::Log => t
                .iter()
                .enumerate()
                .map(|(i, &v)| if v > T::zero() { Ok(v.ln()) } else { Err(BoosterError::NonPositiveTarget(i).into()) })
                .collect(),
        }
    };
    let body = match spec.family {
        Family::Booster | Family::Gbdt => {
            let h = hyper_params(spec.family, &params)?;
            let opts = TrainOptions::new(spec.loss_kind(), h).with_transform(transform).with_seed(seed);
            ModelBody::Booster(train(matrix, targets, &opts)?)
        }
        Family::Forest => {
            let h = hyper_params(spec.family, &params)?;
            let n_trees = integer(&params, "n_trees")?;
            let opts = ForestOptions::new(n_trees, h, seed, spec.task);
            ModelBody::Forest(forest_fit_with(matrix, &wrapped_targets(targets)?, &opts)?)
        }
        Family::Knn => {
            hyper_params(spec.family, &params)?;
            let k = integer(&params, "k")?;
            ModelBody::Knn(knn_fit(matrix, &wrapped_targets(targets)?, k, spec.task)?)
        }
        Family::Linear => {
            hyper_params(spec.family, &params)?;
            let link = match spec.task {
                Task::Classify => Link::Logit,
                Task::Regress => Link::Identity,
            };
            ModelBody::Linear(linear_fit(matrix, &wrapped_targets(targets)?, link, params["ridge_alpha"])?)
        }
    };
    Ok(FittedModel {
        family: spec.family,
        task: spec.task,
        transform,
        params,
        dictionary: None,
        body,
    })
}

impl<T: Scalar> FittedModel<T> {
    pub fn schema(&self) -> &[crate::data::Column] {
        match &self.body {
            ModelBody::Booster(m) => m.schema(),
            ModelBody::Forest(m) => &m.schema,
            ModelBody::Knn(m) => &m.schema,
            ModelBody::Linear(m) => &m.schema,
        }
    }

    /// Class-1 probability or vote share for classifiers; the target
    /// estimate for regressors.
    pub fn score_row(&self, row: &[Option<T>]) -> T {
        let raw = match &self.body {
            ModelBody::Booster(m) => return m.predict_row(row),
            ModelBody::Forest(m) => match self.task {
                Task::Classify => m.vote_share(row),
                Task::Regress => m.mean_output(row),
            },
            ModelBody::Knn(m) => m.predict_row(row),
            ModelBody::Linear(m) => m.predict_row(row),
        };
        match (self.task, self.transform) {
            (Task::Regress, TargetTransform::Log) => raw.exp(),
            _ => raw,
        }
    }

    /// Labels in {0, 1} (score ≥ 0.5 → 1) for classifiers, target estimates
    /// for regressors.
    pub fn predict_row(&self, row: &[Option<T>]) -> T {
        let s = self.score_row(row);
        match self.task {
            Task::Classify => {
                if s >= T::of(0.5) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Task::Regress => s,
        }
    }

    pub fn predict(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<T>, BoosterError> {
        crate::booster::check_schema(self.schema(), matrix.schema())?;
        Ok(matrix.rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn scores(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<T>, BoosterError> {
        crate::booster::check_schema(self.schema(), matrix.schema())?;
        Ok(matrix.rows().map(|r| self.score_row(r)).collect())
    }

    pub fn with_dictionary(mut self, dictionary: CategoryDictionary) -> Self {
        self.dictionary = Some(dictionary);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(document: &str) -> Result<Self, BoosterError> {
        let m: FittedModel<T> =
            serde_json::from_str(document).map_err(|e| BoosterError::CorruptModel(e.to_string()))?;
        let family_matches = matches!(
            (m.family, &m.body),
            (Family::Booster | Family::Gbdt, ModelBody::Booster(_))
                | (Family::Forest, ModelBody::Forest(_))
                | (Family::Knn, ModelBody::Knn(_))
                | (Family::Linear, ModelBody::Linear(_))
        );
        if !family_matches {
            return Err(BoosterError::CorruptModel("family tag does not match the model body".into()));
        }
        let width = m.schema().len();
        match &m.body {
            ModelBody::Booster(e) => {
                let doc = serde_json::to_string(e).expect("ensemble serializes");
                TreeEnsemble::<T>::from_json(&doc)?;
            }
            ModelBody::Forest(f) => {
                if f.trees.is_empty() {
                    return Err(BoosterError::CorruptModel("forest has no trees".into()));
                }
                for t in &f.trees {
                    t.tree.validate(width).map_err(BoosterError::CorruptModel)?;
                }
            }
            ModelBody::Knn(k) => {
                if k.k == 0 || k.k > k.rows.len() || k.rows.iter().any(|r| r.len() != width) {
                    return Err(BoosterError::CorruptModel("inconsistent kNN model".into()));
                }
            }
            ModelBody::Linear(l) => {
                if l.weights.len() != width || l.weights.iter().any(|w| !w.is_finite()) {
                    return Err(BoosterError::CorruptModel("inconsistent linear model".into()));
                }
            }
        }
        Ok(m)
    }
}
