//! Cross-validation and randomized hyperparameter search.

mod folds;
mod space;

pub use folds::{kfold, stratified_folds, FoldPlan};
pub use space::{Distribution, SearchSpace};

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureMatrix;
use crate::learner::{fit, FittedModel, LearnError, LearnerSpec, ParamSet, Task};
use crate::metrics::{Metric, MetricError};
use crate::scalar::{mean, std_dev, Scalar};

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("class {class} has {count} rows, fewer than k = {k}")]
    ClassTooSmall { class: u8, count: usize, k: usize },
    #[error("{n} rows cannot fill {k} folds")]
    TooFewRows { n: usize, k: usize },
    #[error("label in row {0} is not 0 or 1")]
    NonBinaryLabel(usize),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("n_iter must be at least 1")]
    NoTrials,
    #[error("no trial produced a defined objective score")]
    NoValidTrial,
    #[error("fold {fold}: {source}")]
    Fit {
        fold: usize,
        #[source]
        source: LearnError,
    },
    #[error("fold {fold}: {source}")]
    Score {
        fold: usize,
        #[source]
        source: MetricError,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Thread-safe count of model fits.
#[derive(Debug, Default)]
pub struct FitCounter(AtomicUsize);

impl FitCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Objective used by the search: F1 for classifiers, MAPE for regressors.
pub fn default_objective(task: Task) -> Metric {
    match task {
        Task::Classify => Metric::F1,
        Task::Regress => Metric::Mape,
    }
}

/// Stratified plan for classification labels, plain k-fold otherwise.
pub fn plan_for<T: Scalar>(task: Task, targets: &[T], k: usize, seed: u64) -> Result<FoldPlan, TuningError> {
    match task {
        Task::Classify => stratified_folds(targets, k, seed),
        Task::Regress => kfold(targets.len(), k, seed),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvSettings {
    pub metrics: Vec<Metric>,
    /// Parameters applied on top of the learner spec.
    pub params: ParamSet,
    /// Fold f is fitted with seed `seed + f`.
    pub seed: u64,
    pub keep_models: bool,
}

impl CvSettings {
    pub fn new(metrics: &[Metric]) -> Self {
        CvSettings {
            metrics: metrics.to_vec(),
            params: ParamSet::new(),
            seed: 0,
            keep_models: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScores<T> {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// One entry per metric; `None` where the metric is undefined.
    pub train: Vec<Option<T>>,
    pub test: Vec<Option<T>>,
}

/// Mean and population standard deviation over the folds where a metric is
/// defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub mean: Option<T>,
    pub std: Option<T>,
}

fn summarize<T: Scalar>(values: impl Iterator<Item = Option<T>>) -> Summary<T> {
    let v: Vec<T> = values.flatten().collect();
    Summary {
        mean: mean(&v),
        std: std_dev(&v),
    }
}

#[derive(Clone, Debug)]
pub struct CvReport<T> {
    pub metrics: Vec<Metric>,
    pub folds: Vec<FoldScores<T>>,
    pub train: Vec<Summary<T>>,
    pub test: Vec<Summary<T>>,
    /// Per-fold models when `keep_models` was set.
    pub models: Vec<FittedModel<T>>,
}

impl<T: Scalar> CvReport<T> {
    fn position(&self, metric: Metric) -> Option<usize> {
        self.metrics.iter().position(|&m| m == metric)
    }

    pub fn test_summary(&self, metric: Metric) -> Option<&Summary<T>> {
        self.position(metric).map(|i| &self.test[i])
    }

    pub fn train_summary(&self, metric: Metric) -> Option<&Summary<T>> {
        self.position(metric).map(|i| &self.train[i])
    }

    /// CSV with one row per fold and split, then mean and std rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["fold".to_string(), "split".to_string()];
        header.extend(self.metrics.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        let fmt = |v: &Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.folds {
            for (split, vals) in [("train", &f.train), ("test", &f.test)] {
                let mut rec = vec![f.fold.to_string(), split.to_string()];
                rec.extend(vals.iter().map(fmt));
                w.write_record(&rec)?;
            }
        }
        for (label, pick) in [("mean", 0), ("std", 1)] {
            for (split, sums) in [("train", &self.train), ("test", &self.test)] {
                let mut rec = vec![label.to_string(), split.to_string()];
                rec.extend(sums.iter().map(|s| fmt(if pick == 0 { &s.mean } else { &s.std })));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn score_all<T: Scalar>(metrics: &[Metric], truth: &[T], pred: &[T], fold: usize) -> Result<Vec<Option<T>>, TuningError> {
    metrics
        .iter()
        .map(|m| m.evaluate(truth, pred).map_err(|source| TuningError::Score { fold, source }))
        .collect()
}

fn pick<T: Copy>(values: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&r| values[r]).collect()
}

/// Fits on the complement of each fold and scores both the training part and
/// the held-out fold. All preprocessing statistics live inside the fitted
/// models, so they only ever see training rows.
pub fn cross_validate<T: Scalar>(
    spec: &LearnerSpec,
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    plan: &FoldPlan,
    settings: &CvSettings,
    counter: Option<&FitCounter>,
) -> Result<CvReport<T>, TuningError> {
    if plan.n_rows() != matrix.n_rows() || targets.len() != matrix.n_rows() {
        return Err(TuningError::DimensionMismatch(format!(
            "plan covers {} rows, matrix has {}, targets {}",
            plan.n_rows(),
            matrix.n_rows(),
            targets.len()
        )));
    }
    let mut folds = Vec::with_capacity(plan.k);
    let mut models = Vec::new();
    for fold in 0..plan.k {
        let train_rows = plan.train_rows(fold);
        let test_rows = plan.test_rows(fold);
        let train_m = matrix.select_rows(&train_rows);
        let test_m = matrix.select_rows(&test_rows);
        let train_y = pick(targets, &train_rows);
        let test_y = pick(targets, &test_rows);
        let model = fit(spec, &train_m, &train_y, &settings.params, settings.seed.wrapping_add(fold as u64))
            .map_err(|source| TuningError::Fit { fold, source })?;
        if let Some(c) = counter {
            c.bump();
        }
        let predict = |m: &FeatureMatrix<T>| {
            model.predict(m).map_err(|e| TuningError::Fit {
                fold,
                source: LearnError::Booster(e),
            })
        };
        let train_pred = predict(&train_m)?;
        let test_pred = predict(&test_m)?;
        folds.push(FoldScores {
            fold,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            train: score_all(&settings.metrics, &train_y, &train_pred, fold)?,
            test: score_all(&settings.metrics, &test_y, &test_pred, fold)?,
        });
        if settings.keep_models {
            models.push(model);
        }
    }
    let n_metrics = settings.metrics.len();
    Ok(CvReport {
        metrics: settings.metrics.clone(),
        train: (0..n_metrics).map(|i| summarize(folds.iter().map(|f| f.train[i]))).collect(),
        test: (0..n_metrics).map(|i| summarize(folds.iter().map(|f| f.test[i]))).collect(),
        folds,
        models,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial<T> {
    pub index: usize,
    pub params: ParamSet,
    pub mean: Option<T>,
    pub std: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<T> {
    pub objective: Metric,
    pub best_index: usize,
    pub best_params: ParamSet,
    pub best_score: T,
    pub trials: Vec<Trial<T>>,
}

impl<T: Scalar> SearchResult<T> {
    /// Trial log: `[outer_fold,] trial, <params...>, mean, std`.
    pub fn write_csv<W: Write>(&self, writer: &mut csv::Writer<W>, outer_fold: Option<usize>, header: bool) -> Result<(), csv::Error> {
        let names: Vec<&String> = self.trials.first().map(|t| t.params.keys().collect()).unwrap_or_default();
        if header {
            let mut h: Vec<String> = Vec::new();
            if outer_fold.is_some() {
                h.push("outer_fold".into());
            }
            h.push("trial".into());
            h.extend(names.iter().map(|s| s.to_string()));
            h.push("mean".into());
            h.push("std".into());
            writer.write_record(&h)?;
        }
        for t in &self.trials {
            let mut rec: Vec<String> = Vec::new();
            if let Some(f) = outer_fold {
                rec.push(f.to_string());
            }
            rec.push(t.index.to_string());
            rec.extend(names.iter().map(|n| t.params[*n].to_string()));
            rec.push(t.mean.map(|v| v.to_string()).unwrap_or_default());
            rec.push(t.std.map(|v| v.to_string()).unwrap_or_default());
            writer.write_record(&rec)?;
        }
        Ok(())
    }
}

/// Draws `n_iter` configurations, scores each by `inner_k`-fold
/// cross-validation on the given rows and returns the best by mean objective
/// (lowest trial index on ties). Trials run in parallel; every trial uses
/// the same fold plan and fit seeds.
#[allow(clippy::too_many_arguments)]
pub fn random_search<T: Scalar>(
    space: &SearchSpace,
    n_iter: usize,
    spec: &LearnerSpec,
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    inner_k: usize,
    objective: Metric,
    seed: u64,
    counter: Option<&FitCounter>,
) -> Result<SearchResult<T>, TuningError> {
    if n_iter == 0 {
        return Err(TuningError::NoTrials);
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<ParamSet> = (0..n_iter).map(|_| space.sample(&mut rng)).collect();
    let plan = plan_for(spec.task, targets, inner_k, seed.wrapping_add(1))?;
    let fit_seed = seed.wrapping_add(2);

    let results: Vec<Result<Trial<T>, TuningError>> = draws
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            let settings = CvSettings {
                metrics: vec![objective],
                params,
                seed: fit_seed,
                keep_models: false,
            };
            let report = cross_validate(spec, matrix, targets, &plan, &settings, counter)?;
            Ok(Trial {
                index,
                mean: report.test[0].mean,
                std: report.test[0].std,
                params: settings.params,
            })
        })
        .collect();
    let trials: Vec<Trial<T>> = results.into_iter().collect::<Result<_, _>>()?;

    let mut best: Option<(usize, T)> = None;
    for t in &trials {
        let Some(m) = t.mean else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if objective.higher_is_better() {
                    m > b
                } else {
                    m < b
                }
            }
        };
        if better {
            best = Some((t.index, m));
        }
    }
    let (best_index, best_score) = best.ok_or(TuningError::NoValidTrial)?;
    Ok(SearchResult {
        objective,
        best_index,
        best_params: trials[best_index].params.clone(),
        best_score,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedConfig {
    pub outer_k: usize,
    pub inner_k: usize,
    pub n_iter: usize,
    pub space: SearchSpace,
    pub metrics: Vec<Metric>,
    pub objective: Metric,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct NestedFold<T> {
    pub scores: FoldScores<T>,
    pub search: SearchResult<T>,
}

#[derive(Clone, Debug)]
pub struct NestedReport<T> {
    pub metrics: Vec<Metric>,
    pub folds: Vec<NestedFold<T>>,
    pub train: Vec<Summary<T>>,
    pub test: Vec<Summary<T>>,
    /// Fits made inside the searches.
    pub inner_fits: usize,
    /// Refits of the selected configuration on each outer training part.
    pub outer_fits: usize,
}

impl<T: Scalar> NestedReport<T> {
    pub fn test_summary(&self, metric: Metric) -> Option<&Summary<T>> {
        self.metrics.iter().position(|&m| m == metric).map(|i| &self.test[i])
    }

    /// The same layout as a cross-validation report.
    pub fn as_cv_report(&self) -> CvReport<T> {
        CvReport {
            metrics: self.metrics.clone(),
            folds: self.folds.iter().map(|f| f.scores.clone()).collect(),
            train: self.train.clone(),
            test: self.test.clone(),
            models: Vec::new(),
        }
    }

    pub fn write_trials_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for (i, f) in self.folds.iter().enumerate() {
            f.search.write_csv(&mut w, Some(f.scores.fold), i == 0)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outer cross-validation around a random search: each outer training part
/// is searched, the winner is refitted on it and scored on the outer fold.
pub fn nested_evaluate<T: Scalar>(
    spec: &LearnerSpec,
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    config: &NestedConfig,
    counter: Option<&FitCounter>,
) -> Result<NestedReport<T>, TuningError> {
    if targets.len() != matrix.n_rows() {
        return Err(TuningError::DimensionMismatch(format!(
            "{} rows but {} targets",
            matrix.n_rows(),
            targets.len()
        )));
    }
    let plan = plan_for(spec.task, targets, config.outer_k, config.seed)?;
    let local = FitCounter::new();
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let train_rows = plan.train_rows(fold);
        let test_rows = plan.test_rows(fold);
        let train_m = matrix.select_rows(&train_rows);
        let test_m = matrix.select_rows(&test_rows);
        let train_y = pick(targets, &train_rows);
        let test_y = pick(targets, &test_rows);
        let search = random_search(
            &config.space,
            config.n_iter,
            spec,
            &train_m,
            &train_y,
            config.inner_k,
            config.objective,
            config.seed.wrapping_add(1000 * (fold as u64 + 1)),
            Some(&local),
        )?;
        let model = fit(spec, &train_m, &train_y, &search.best_params, config.seed.wrapping_add(fold as u64))
            .map_err(|source| TuningError::Fit { fold, source })?;
        let predict = |m: &FeatureMatrix<T>| {
            model.predict(m).map_err(|e| TuningError::Fit {
                fold,
                source: LearnError::Booster(e),
            })
        };
        let train_pred = predict(&train_m)?;
        let test_pred = predict(&test_m)?;
        folds.push(NestedFold {
            scores: FoldScores {
                fold,
                n_train: train_rows.len(),
                n_test: test_rows.len(),
                train: score_all(&config.metrics, &train_y, &train_pred, fold)?,
                test: score_all(&config.metrics, &test_y, &test_pred, fold)?,
            },
            search,
        });
    }
    if let Some(c) = counter {
        c.0.fetch_add(local.get(), Ordering::Relaxed);
    }
    let n_metrics = config.metrics.len();
    Ok(NestedReport {
        metrics: config.metrics.clone(),
        train: (0..n_metrics).map(|i| summarize(folds.iter().map(|f| f.scores.train[i]))).collect(),
        test: (0..n_metrics).map(|i| summarize(folds.iter().map(|f| f.scores.test[i]))).collect(),
        outer_fits: folds.len(),
        folds,
        inner_fits: local.get(),
    })
}
