//! Regularized second-order gradient tree boosting.
//!
//! Setting `reg_lambda = gamma = 0` turns the learner into plain gradient
//! boosted trees. `gamma` is the per-leaf complexity penalty and `reg_lambda`
//! the L2 penalty on leaf weights.

mod ensemble;
mod loss;
mod tree;

pub use ensemble::{check_schema, train, TargetTransform, TrainOptions, TreeEnsemble};
pub use loss::{loss_derivatives, LossKind, LossSpec, DEFAULT_CURVATURE_FLOOR};
pub use tree::{grow_tree, leaf_weight, split_gain, split_threshold, Tree, TreeNode};

pub(crate) use loss::sigmoid;
pub(crate) use tree::{grow_presorted, SortedColumns};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoosterError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("target in row {0} must be positive for this loss or transform")]
    NonPositiveTarget(usize),
    #[error("target in row {0} must be 0 or 1 for the logistic loss")]
    NonBinaryTarget(usize),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt model document: {0}")]
    CorruptModel(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
}

/// Tunable configuration of the booster (also used by the forest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    /// Complexity penalty per leaf.
    pub gamma: f64,
    /// L2 penalty on leaf weights.
    pub reg_lambda: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub scale_pos_weight: f64,
    pub n_rounds: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            max_depth: 6,
            learning_rate: 0.3,
            min_child_weight: 1.0,
            gamma: 0.0,
            reg_lambda: 1.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            scale_pos_weight: 1.0,
            n_rounds: 100,
        }
    }
}

impl HyperParams {
    pub const NAMES: [&'static str; 9] = [
        "max_depth",
        "learning_rate",
        "min_child_weight",
        "gamma",
        "reg_lambda",
        "subsample",
        "colsample_bytree",
        "scale_pos_weight",
        "n_rounds",
    ];

    pub fn validate(&self) -> Result<(), BoosterError> {
        let bad = |what: &str| Err(BoosterError::InvalidParam(what.to_string()));
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !unit(self.learning_rate) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be finite and >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return bad("reg_lambda must be finite and >= 0");
        }
        if !unit(self.subsample) {
            return bad("subsample must lie in (0, 1]");
        }
        if !unit(self.colsample_bytree) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if !(self.scale_pos_weight > 0.0 && self.scale_pos_weight.is_finite()) {
            return bad("scale_pos_weight must be finite and > 0");
        }
        Ok(())
    }

    /// Sets a parameter by name; integer parameters are rounded.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), BoosterError> {
        if !value.is_finite() {
            return Err(BoosterError::InvalidParam(format!("{name} = {value}")));
        }
        match name {
            "max_depth" => self.max_depth = value.round().max(0.0) as usize,
            "learning_rate" => self.learning_rate = value,
            "min_child_weight" => self.min_child_weight = value,
            "gamma" => self.gamma = value,
            "reg_lambda" => self.reg_lambda = value,
            "subsample" => self.subsample = value,
            "colsample_bytree" => self.colsample_bytree = value,
            "scale_pos_weight" => self.scale_pos_weight = value,
            "n_rounds" => self.n_rounds = value.round().max(0.0) as usize,
            _ => return Err(BoosterError::InvalidParam(format!("unknown parameter `{name}`"))),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "max_depth" => self.max_depth as f64,
            "learning_rate" => self.learning_rate,
            "min_child_weight" => self.min_child_weight,
            "gamma" => self.gamma,
            "reg_lambda" => self.reg_lambda,
            "subsample" => self.subsample,
            "colsample_bytree" => self.colsample_bytree,
            "scale_pos_weight" => self.scale_pos_weight,
            "n_rounds" => self.n_rounds as f64,
            _ => return None,
        })
    }
}
