//! Comparison learners: k-nearest neighbours, ridge and logistic regression,
//! and a random forest built on the booster's tree grower.
//!
//! kNN and the linear models cannot route missing cells, so they impute
//! column medians learned from their own training rows.

mod forest;
mod knn;
mod linear;
mod preprocess;

pub use forest::{forest_fit, forest_fit_with, forest_predict, ForestModel, ForestOptions};
pub use knn::{knn_fit, knn_predict, KnnModel};
pub use linear::{linear_fit, linear_predict, solve_ridge, Link, LinearModel};
pub use preprocess::{MedianImputer, Standardizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::booster::BoosterError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Binary labels in {0, 1}; 1 is the short class.
    Classify,
    Regress,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("k = {k} exceeds the {n} training rows")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("logistic fit did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no training rows")]
    EmptyInput,
    #[error(transparent)]
    Booster(#[from] BoosterError),
}
