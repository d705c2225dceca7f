use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_derivatives, sigmoid, LossKind, LossSpec};
use super::tree::{grow_presorted, SortedColumns, Tree};
use super::{BoosterError, HyperParams};
use crate::data::{CategoryDictionary, Column, FeatureMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    #[default]
    Identity,
    /// Train on ln(y), predict exp of the raw score.
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub loss: LossSpec,
    pub params: HyperParams,
    pub transform: TargetTransform,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(loss: LossKind, params: HyperParams) -> Self {
        TrainOptions {
            loss: LossSpec::new(loss),
            params,
            transform: TargetTransform::Identity,
            seed: 0,
        }
    }

    pub fn with_transform(mut self, transform: TargetTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Additive tree model: raw score = base_score + η·Σ tree outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble<T> {
    trees: Vec<Tree<T>>,
    base_score: T,
    learning_rate: T,
    objective: LossSpec,
    transform: TargetTransform,
    schema: Vec<Column>,
    params: HyperParams,
    #[serde(default)]
    dictionary: Option<CategoryDictionary>,
}

impl<T: Scalar> TreeEnsemble<T> {
    /// Assembles an ensemble from parts, checking every invariant a
    /// deserialized document must satisfy.
    pub fn from_parts(
        trees: Vec<Tree<T>>,
        base_score: T,
        learning_rate: T,
        objective: LossSpec,
        transform: TargetTransform,
        schema: Vec<Column>,
        params: HyperParams,
    ) -> Result<Self, BoosterError> {
        let e = TreeEnsemble {
            trees,
            base_score,
            learning_rate,
            objective,
            transform,
            schema,
            params,
            dictionary: None,
        };
        e.check().map_err(BoosterError::CorruptModel)?;
        Ok(e)
    }

    fn check(&self) -> Result<(), String> {
        if !self.base_score.is_finite() {
            return Err("base_score is not finite".into());
        }
        if !(self.learning_rate > T::zero() && self.learning_rate <= T::one()) {
            return Err("learning_rate outside (0, 1]".into());
        }
        if self.objective.kind == LossKind::Logistic && self.transform == TargetTransform::Log {
            return Err("logistic objective cannot use the log transform".into());
        }
        for (k, tree) in self.trees.iter().enumerate() {
            tree.validate(self.schema.len()).map_err(|e| format!("tree {k}: {e}"))?;
        }
        Ok(())
    }

    pub fn trees(&self) -> &[Tree<T>] {
        &self.trees
    }

    pub fn base_score(&self) -> T {
        self.base_score
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn objective(&self) -> LossSpec {
        self.objective
    }

    pub fn transform(&self) -> TargetTransform {
        self.transform
    }

    pub fn schema(&self) -> &[Column] {
        &self.schema
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn dictionary(&self) -> Option<&CategoryDictionary> {
        self.dictionary.as_ref()
    }

    /// Attaches the categorical dictionary used to encode the training data.
    pub fn with_dictionary(mut self, dictionary: CategoryDictionary) -> Self {
        self.dictionary = Some(dictionary);
        self
    }

    /// The first `k` trees only.
    pub fn truncated(&self, k: usize) -> Self {
        let mut e = self.clone();
        e.trees.truncate(k);
        e
    }

    pub(crate) fn check_schema(&self, schema: &[Column]) -> Result<(), BoosterError> {
        check_schema(&self.schema, schema)
    }

    /// Raw score of one row, before the inverse transform or sigmoid.
    pub fn raw_row(&self, row: &[Option<T>]) -> T {
        let sum: T = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.base_score + self.learning_rate * sum
    }

    /// Prediction on the target scale for one row.
    pub fn predict_row(&self, row: &[Option<T>]) -> T {
        self.finish(self.raw_row(row))
    }

    fn finish(&self, raw: T) -> T {
        match (self.objective.kind, self.transform) {
            (LossKind::Logistic, _) => sigmoid(raw),
            (_, TargetTransform::Log) => raw.exp(),
            (_, TargetTransform::Identity) => raw,
        }
    }

    pub fn predict_raw(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<T>, BoosterError> {
        self.check_schema(matrix.schema())?;
        Ok(matrix.rows().map(|r| self.raw_row(r)).collect())
    }

    /// Per-row predictions: the probability of class 1 for the logistic
    /// objective, otherwise the target (exp of the raw score in log space).
    pub fn predict(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<T>, BoosterError> {
        self.check_schema(matrix.schema())?;
        Ok(matrix.rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(document: &str) -> Result<Self, BoosterError> {
        let e: TreeEnsemble<T> =
            serde_json::from_str(document).map_err(|err| BoosterError::CorruptModel(err.to_string()))?;
        e.check().map_err(BoosterError::CorruptModel)?;
        Ok(e)
    }
}

pub fn check_schema(expected: &[Column], got: &[Column]) -> Result<(), BoosterError> {
    for (i, col) in expected.iter().enumerate() {
        match got.get(i) {
            None => return Err(BoosterError::SchemaMismatch(format!("missing column `{}`", col.name))),
            Some(c) if c != col => {
                return Err(BoosterError::SchemaMismatch(format!(
                    "column {i} is `{}` ({:?}), expected `{}` ({:?})",
                    c.name, c.kind, col.name, col.kind
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = got.get(expected.len()) {
        return Err(BoosterError::SchemaMismatch(format!("unexpected column `{}`", extra.name)));
    }
    Ok(())
}

/// Trains an ensemble on `matrix` against `targets`.
///
/// The base score is the mean of the (transformed) target; for the logistic
/// objective it is the log-odds of the positive rate. Each round draws a
/// Bernoulli row sample and a column subset from the seeded generator and
/// grows one tree on the current gradients.
pub fn train<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    options: &TrainOptions,
) -> Result<TreeEnsemble<T>, BoosterError> {
    let params = &options.params;
    params.validate()?;
    let n = matrix.n_rows();
    if targets.len() != n {
        return Err(BoosterError::DimensionMismatch(format!("{n} rows but {} targets", targets.len())));
    }
    let kind = options.loss.kind;
    if kind == LossKind::Logistic && options.transform == TargetTransform::Log {
        return Err(BoosterError::InvalidParam("logistic objective cannot use the log transform".into()));
    }
    let y: Vec<T> = match options.transform {
        TargetTransform::Identity => targets.to_vec(),
        TargetTransform::Log => targets
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > T::zero() { Ok(v.ln()) } else { Err(BoosterError::NonPositiveTarget(i)) })
            .collect::<Result<_, _>>()?,
    };
    if kind.requires_positive_target() {
        if let Some(i) = y.iter().position(|&v| !(v > T::zero())) {
            return Err(BoosterError::NonPositiveTarget(i));
        }
    }
    if kind == LossKind::Logistic {
        if let Some(i) = y.iter().position(|&v| v != T::zero() && v != T::one()) {
            return Err(BoosterError::NonBinaryTarget(i));
        }
    }

    let base_score = base_score(kind, &y);
    let eta = T::of(params.learning_rate);
    let mut ensemble = TreeEnsemble {
        trees: Vec::with_capacity(params.n_rounds),
        base_score,
        learning_rate: eta,
        objective: options.loss,
        transform: options.transform,
        schema: matrix.schema().to_vec(),
        params: params.clone(),
        dictionary: None,
    };
    if params.n_rounds == 0 || n == 0 {
        return Ok(ensemble);
    }

    let sorted = SortedColumns::new(matrix);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut raw = vec![base_score; n];
    let spw = T::of(params.scale_pos_weight);
    let n_cols = matrix.n_cols();
    let n_sampled = ((params.colsample_bytree * n_cols as f64).round() as usize).clamp(1.min(n_cols), n_cols);

    for _ in 0..params.n_rounds {
        let (mut grad, mut hess) = loss_derivatives(&options.loss, &y, &raw)?;
        if kind == LossKind::Logistic && spw != T::one() {
            for i in (0..n).filter(|&i| y[i] == T::one()) {
                grad[i] *= spw;
                hess[i] *= spw;
            }
        }
        let row_mask: Vec<bool> = if params.subsample < 1.0 {
            (0..n).map(|_| rng.random::<f64>() < params.subsample).collect()
        } else {
            vec![true; n]
        };
        let col_mask: Vec<bool> = if n_sampled < n_cols {
            let mut mask = vec![false; n_cols];
            for c in sample(&mut rng, n_cols, n_sampled) {
                mask[c] = true;
            }
            mask
        } else {
            vec![true; n_cols]
        };
        let tree = grow_presorted(matrix, &sorted, &grad, &hess, &row_mask, &col_mask, params);
        for (r, row) in matrix.rows().enumerate() {
            raw[r] += eta * tree.predict_row(row);
        }
        ensemble.trees.push(tree);
    }
    Ok(ensemble)
}

fn base_score<T: Scalar>(kind: LossKind, y: &[T]) -> T {
    let mean = crate::scalar::mean(y).unwrap_or_else(T::zero);
    if kind == LossKind::Logistic {
        let eps = T::of(1e-6);
        let p = mean.max(eps).min(T::one() - eps);
        (p / (T::one() - p)).ln()
    } else {
        mean
    }
}
