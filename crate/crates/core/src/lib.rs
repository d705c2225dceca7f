//! Traffic incident clearance-time prediction.
//!
//! A second-order gradient-boosted tree ensemble with baselines, nested
//! random-search tuning, traffic-flow feature construction, Shapley
//! explanations, a two-stage (classify, then regress) pipeline, a synthetic
//! data generator and a command-line front end.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod baselines;
pub mod booster;
pub mod cli;
pub mod data;
pub mod flow;
pub mod learner;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod shapley;
pub mod synth;
pub mod tuning;

pub use scalar::Scalar;

pub type Matrix = data::FeatureMatrix<f64>;
pub type Matrix32 = data::FeatureMatrix<f32>;
pub type Ensemble = booster::TreeEnsemble<f64>;
pub type Ensemble32 = booster::TreeEnsemble<f32>;
pub type Model = learner::FittedModel<f64>;
pub type Model32 = learner::FittedModel<f32>;
pub type BiLevel = pipeline::BiLevelModel<f64>;
pub type BiLevel32 = pipeline::BiLevelModel<f32>;
