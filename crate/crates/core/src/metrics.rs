//! Classification counts and scores, MAPE and the coefficient of determination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("value at index {0} is not 0 or 1")]
    NonBinary(usize),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("true value at index {0} is not positive")]
    NonPositiveTruth(usize),
    #[error("true values have zero variance")]
    ZeroVariance,
}

/// Confusion counts with class 1 (short incident) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    Ok(())
}

fn as_label<T: Scalar>(v: T, index: usize) -> Result<bool, MetricError> {
    if v == T::one() {
        Ok(true)
    } else if v == T::zero() {
        Ok(false)
    } else {
        Err(MetricError::NonBinary(index))
    }
}

pub fn confusion<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<ConfusionCounts, MetricError> {
    check_lengths(y_true.len(), y_pred.len())?;
    let mut c = ConfusionCounts::default();
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        match (as_label(t, i)?, as_label(p, i)?) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Accuracy, precision, recall and F1. An undefined precision (no positive
/// predictions) or recall (no positive truths) is reported as 0 with its flag set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl<T: Scalar> ClassificationScores<T> {
    pub fn is_degenerate(&self) -> bool {
        self.precision_undefined || self.recall_undefined
    }
}

pub fn classification_scores<T: Scalar>(c: &ConfusionCounts) -> Result<ClassificationScores<T>, MetricError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricError::EmptyEvaluation);
    }
    let f = |v: usize| T::of(v as f64);
    let accuracy = f(c.tp + c.tn) / f(total);
    let precision_undefined = c.tp + c.fp == 0;
    let recall_undefined = c.tp + c.fn_ == 0;
    let precision = if precision_undefined { T::zero() } else { f(c.tp) / f(c.tp + c.fp) };
    let recall = if recall_undefined { T::zero() } else { f(c.tp) / f(c.tp + c.fn_) };
    let f1 = if precision + recall == T::zero() {
        T::zero()
    } else {
        T::of(2.0) * precision * recall / (precision + recall)
    };
    Ok(ClassificationScores {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
    })
}

/// Mean absolute percentage error, in percent points.
pub fn mape<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<T, MetricError> {
    check_lengths(y_true.len(), y_pred.len())?;
    if y_true.is_empty() {
        return Err(MetricError::EmptyEvaluation);
    }
    let mut total = T::zero();
    for (i, (&y, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if !(y > T::zero()) {
            return Err(MetricError::NonPositiveTruth(i));
        }
        total += ((y - p) / y).abs();
    }
    Ok(T::of(100.0) * total / T::of(y_true.len() as f64))
}

/// Coefficient of determination; may be negative.
pub fn r2<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<T, MetricError> {
    check_lengths(y_true.len(), y_pred.len())?;
    if y_true.len() < 2 {
        return Err(MetricError::EmptyEvaluation);
    }
    let n = T::of(y_true.len() as f64);
    let mean = y_true.iter().copied().sum::<T>() / n;
    let ss_tot: T = y_true.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if ss_tot == T::zero() {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: T = y_true.iter().zip(y_pred).map(|(&y, &p)| (y - p) * (y - p)).sum();
    Ok(T::one() - ss_res / ss_tot)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionScores<T> {
    pub mape: T,
    /// `None` when the truths have zero variance.
    pub r2: Option<T>,
    pub n: usize,
}

pub fn regression_scores<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<RegressionScores<T>, MetricError> {
    let mape = mape(y_true, y_pred)?;
    let r2 = match r2(y_true, y_pred) {
        Ok(v) => Some(v),
        Err(MetricError::ZeroVariance | MetricError::EmptyEvaluation) => None,
        Err(e) => return Err(e),
    };
    Ok(RegressionScores {
        mape,
        r2,
        n: y_true.len(),
    })
}

/// Metrics selectable for cross-validation and tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    Mape,
    R2,
}

impl Metric {
    pub const CLASSIFICATION: [Metric; 4] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1];
    pub const REGRESSION: [Metric; 2] = [Metric::Mape, Metric::R2];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Mape => "mape",
            Metric::R2 => "r2",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mape)
    }

    /// Scores predictions; `Ok(None)` when the metric is undefined on this
    /// data (R² of constant truths).
    pub fn evaluate<T: Scalar>(self, y_true: &[T], y_pred: &[T]) -> Result<Option<T>, MetricError> {
        match self {
            Metric::Accuracy | Metric::Precision | Metric::Recall | Metric::F1 => {
                let s = classification_scores::<T>(&confusion(y_true, y_pred)?)?;
                Ok(Some(match self {
                    Metric::Accuracy => s.accuracy,
                    Metric::Precision => s.precision,
                    Metric::Recall => s.recall,
                    _ => s.f1,
                }))
            }
            Metric::Mape => mape(y_true, y_pred).map(Some),
            Metric::R2 => match r2(y_true, y_pred) {
                Ok(v) => Ok(Some(v)),
                Err(MetricError::ZeroVariance | MetricError::EmptyEvaluation) => Ok(None),
                Err(e) => Err(e),
            },
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1, Metric::Mape, Metric::R2]
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}
