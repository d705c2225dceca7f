//! Shapley-value attributions with an interventional value function:
//! v(S) is the mean prediction over background rows whose features in S are
//! replaced by the instance's values.

use std::io::Write;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::booster::TreeEnsemble;
use crate::data::{Cell, FeatureMatrix};
use crate::learner::FittedModel;
use crate::scalar::Scalar;

pub const DEFAULT_EXACT_LIMIT: usize = 15;
pub const DEFAULT_BACKGROUND: usize = 100;
pub const DEFAULT_BACKGROUND_SEED: u64 = 0x5eed;

#[derive(Debug, Error)]
pub enum ShapError {
    #[error("exact enumeration is limited to {limit} features, the model has {n}; use the Monte-Carlo estimator")]
    TooManyFeatures { n: usize, limit: usize },
    #[error("background is empty")]
    EmptyBackground,
    #[error("no instances to explain")]
    EmptyInput,
    #[error("n_permutations must be at least 1")]
    NoPermutations,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Anything that maps a feature row to a real prediction.
pub trait Predictor<T>: Sync {
    fn predict_row(&self, row: &[Cell<T>]) -> T;
}

impl<T: Scalar> Predictor<T> for TreeEnsemble<T> {
    fn predict_row(&self, row: &[Cell<T>]) -> T {
        TreeEnsemble::predict_row(self, row)
    }
}

/// Explains the continuous score: class-1 probability for classifiers,
/// the duration estimate for regressors.
impl<T: Scalar> Predictor<T> for FittedModel<T> {
    fn predict_row(&self, row: &[Cell<T>]) -> T {
        self.score_row(row)
    }
}

/// Adapter for closures.
pub struct FnPredictor<F>(pub F);

impl<T, F: Fn(&[Cell<T>]) -> T + Sync> Predictor<T> for FnPredictor<F> {
    fn predict_row(&self, row: &[Cell<T>]) -> T {
        (self.0)(row)
    }
}

pub struct ValueFunction<'a, T, P: ?Sized> {
    model: &'a P,
    background: &'a [Vec<Cell<T>>],
    instance: &'a [Cell<T>],
}

impl<'a, T: Scalar, P: Predictor<T> + ?Sized> ValueFunction<'a, T, P> {
    pub fn new(model: &'a P, background: &'a [Vec<Cell<T>>], instance: &'a [Cell<T>]) -> Result<Self, ShapError> {
        if background.is_empty() {
            return Err(ShapError::EmptyBackground);
        }
        if let Some(b) = background.iter().find(|b| b.len() != instance.len()) {
            return Err(ShapError::DimensionMismatch(format!(
                "instance has {} features, a background row {}",
                instance.len(),
                b.len()
            )));
        }
        Ok(ValueFunction {
            model,
            background,
            instance,
        })
    }

    pub fn n_features(&self) -> usize {
        self.instance.len()
    }

    /// v(S) for `in_s[j]` marking the members of S. Every coalition, the
    /// full one included, is a mean over the background so that features the
    /// model ignores get exactly zero.
    pub fn value(&self, in_s: &[bool]) -> T {
        let mut row = vec![None; self.instance.len()];
        let mut total = T::zero();
        for b in self.background {
            for j in 0..row.len() {
                row[j] = if in_s[j] { self.instance[j] } else { b[j] };
            }
            total += self.model.predict_row(&row);
        }
        total / T::of(self.background.len() as f64)
    }

    fn mean_of(&self, rows: &[Vec<Cell<T>>]) -> T {
        rows.iter().map(|r| self.model.predict_row(r)).sum::<T>() / T::of(rows.len() as f64)
    }

    /// Marginal contributions along one ordering of the features.
    fn permutation_contributions(&self, order: &[usize]) -> Vec<T> {
        let n = self.n_features();
        let mut hybrids: Vec<Vec<Cell<T>>> = self.background.to_vec();
        let mut prev = self.mean_of(&hybrids);
        let mut phi = vec![T::zero(); n];
        for &j in order {
            for h in &mut hybrids {
                h[j] = self.instance[j];
            }
            let v = self.mean_of(&hybrids);
            phi[j] = v - prev;
            prev = v;
        }
        phi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    MonteCarlo { samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapReport<T> {
    pub phi: Vec<T>,
    /// v(∅), the mean background prediction.
    pub base_value: T,
    pub prediction: T,
    pub estimator: Estimator,
    /// Standard errors of the Monte-Carlo means.
    pub stderr: Option<Vec<T>>,
}

/// Exact attributions by enumerating all 2^n coalitions, each valued once.
pub fn exact_shapley<T: Scalar, P: Predictor<T> + ?Sized>(vf: &ValueFunction<'_, T, P>) -> Result<ShapReport<T>, ShapError> {
    exact_shapley_limited(vf, DEFAULT_EXACT_LIMIT)
}

pub fn exact_shapley_limited<T: Scalar, P: Predictor<T> + ?Sized>(
    vf: &ValueFunction<'_, T, P>,
    limit: usize,
) -> Result<ShapReport<T>, ShapError> {
    let n = vf.n_features();
    if n > limit.min(30) {
        return Err(ShapError::TooManyFeatures { n, limit });
    }
    let values: Vec<T> = (0..1usize << n)
        .into_par_iter()
        .map(|mask| {
            let in_s: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
            vf.value(&in_s)
        })
        .collect();
    // weight[s] = s!(n-s-1)!/n!
    let mut weight = vec![T::zero(); n.max(1)];
    for (s, w) in weight.iter_mut().enumerate().take(n) {
        let mut acc = 1.0f64 / n as f64;
        for i in 1..=s {
            acc *= i as f64 / (n - i) as f64;
        }
        *w = T::of(acc);
    }
    let phi = (0..n)
        .map(|i| {
            let bit = 1usize << i;
            let mut total = T::zero();
            for mask in 0..1usize << n {
                if mask & bit == 0 {
                    total += weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
                }
            }
            total
        })
        .collect();
    Ok(ShapReport {
        phi,
        base_value: values[0],
        prediction: vf.model.predict_row(vf.instance),
        estimator: Estimator::Exact,
        stderr: None,
    })
}

/// Permutation-sampling estimate with per-feature standard errors.
pub fn mc_shapley<T: Scalar, P: Predictor<T> + ?Sized>(
    vf: &ValueFunction<'_, T, P>,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapReport<T>, ShapError> {
    if n_permutations == 0 {
        return Err(ShapError::NoPermutations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..n_permutations)
        .map(|_| {
            let mut p: Vec<usize> = (0..vf.n_features()).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    mc_shapley_with_permutations(vf, &perms)
}

/// The Monte-Carlo estimator over an explicit list of orderings.
pub fn mc_shapley_with_permutations<T: Scalar, P: Predictor<T> + ?Sized>(
    vf: &ValueFunction<'_, T, P>,
    permutations: &[Vec<usize>],
) -> Result<ShapReport<T>, ShapError> {
    if permutations.is_empty() {
        return Err(ShapError::NoPermutations);
    }
    let n = vf.n_features();
    let samples: Vec<Vec<T>> = permutations.par_iter().map(|p| vf.permutation_contributions(p)).collect();
    let count = T::of(samples.len() as f64);
    let mut phi = vec![T::zero(); n];
    for s in &samples {
        for (a, v) in phi.iter_mut().zip(s) {
            *a += *v;
        }
    }
    for a in &mut phi {
        *a /= count;
    }
    let stderr = (0..n)
        .map(|j| {
            if samples.len() < 2 {
                return T::zero();
            }
            let ss: T = samples.iter().map(|s| (s[j] - phi[j]) * (s[j] - phi[j])).sum();
            (ss / (count - T::one()) / count).sqrt()
        })
        .collect();
    let none = vec![false; n];
    Ok(ShapReport {
        phi,
        base_value: vf.value(&none),
        prediction: vf.model.predict_row(vf.instance),
        estimator: Estimator::MonteCarlo {
            samples: permutations.len(),
        },
        stderr: Some(stderr),
    })
}

/// How attributions are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorConfig {
    /// Exact up to `DEFAULT_EXACT_LIMIT` features, Monte-Carlo above.
    Auto { permutations: usize },
    Exact,
    MonteCarlo { permutations: usize },
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Auto { permutations: 100 }
    }
}

pub fn explain_row<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    instance: &[Cell<T>],
    background: &[Vec<Cell<T>>],
    config: EstimatorConfig,
    seed: u64,
) -> Result<ShapReport<T>, ShapError> {
    let vf = ValueFunction::new(model, background, instance)?;
    match config {
        EstimatorConfig::Exact => exact_shapley(&vf),
        EstimatorConfig::Auto { .. } if vf.n_features() <= DEFAULT_EXACT_LIMIT => exact_shapley(&vf),
        EstimatorConfig::Auto { permutations } | EstimatorConfig::MonteCarlo { permutations } => {
            mc_shapley(&vf, permutations, seed)
        }
    }
}

/// Up to `n` rows drawn without replacement (all rows if fewer), in row order.
pub fn sample_background<T: Scalar>(matrix: &FeatureMatrix<T>, n: usize, seed: u64) -> Vec<Vec<Cell<T>>> {
    let rows = matrix.n_rows();
    let mut idx: Vec<usize> = if rows <= n {
        (0..rows).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), rows, n).into_vec()
    };
    idx.sort_unstable();
    idx.into_iter().map(|r| matrix.row(r).to_vec()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary<T> {
    pub features: Vec<String>,
    pub mean_phi: Vec<T>,
    pub mean_abs_phi: Vec<T>,
    pub mean_stderr: Option<Vec<T>>,
    /// Feature indices by decreasing mean |φ|, ties by index.
    pub ranking: Vec<usize>,
}

impl<T: Scalar> ShapSummary<T> {
    pub fn ranked_names(&self) -> Vec<&str> {
        self.ranking.iter().map(|&i| self.features[i].as_str()).collect()
    }

    /// `rank, feature, phi, abs_mean_phi, stderr` sorted by rank.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "feature", "phi", "abs_mean_phi", "stderr"])?;
        for (rank, &i) in self.ranking.iter().enumerate() {
            let se = self.mean_stderr.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
            w.write_record([
                (rank + 1).to_string(),
                self.features[i].clone(),
                self.mean_phi[i].to_string(),
                self.mean_abs_phi[i].to_string(),
                se,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean |φ| per feature over every row of `matrix`; instance i uses seed
/// `seed + i` for Monte-Carlo sampling.
pub fn shap_summary<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    matrix: &FeatureMatrix<T>,
    background: &[Vec<Cell<T>>],
    config: EstimatorConfig,
    seed: u64,
) -> Result<ShapSummary<T>, ShapError> {
    if matrix.n_rows() == 0 {
        return Err(ShapError::EmptyInput);
    }
    let reports: Vec<ShapReport<T>> = (0..matrix.n_rows())
        .into_par_iter()
        .map(|i| explain_row(model, matrix.row(i), background, config, seed.wrapping_add(i as u64)))
        .collect::<Result<_, _>>()?;
    let n = matrix.n_cols();
    let count = T::of(reports.len() as f64);
    let mut mean_phi = vec![T::zero(); n];
    let mut mean_abs_phi = vec![T::zero(); n];
    let mut stderr = reports[0].stderr.as_ref().map(|_| vec![T::zero(); n]);
    for r in &reports {
        for j in 0..n {
            mean_phi[j] += r.phi[j] / count;
            mean_abs_phi[j] += r.phi[j].abs() / count;
        }
        if let (Some(acc), Some(se)) = (stderr.as_mut(), r.stderr.as_ref()) {
            for j in 0..n {
                acc[j] += se[j] / count;
            }
        }
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| mean_abs_phi[b].partial_cmp(&mean_abs_phi[a]).expect("finite").then(a.cmp(&b)));
    Ok(ShapSummary {
        features: matrix.column_names(),
        mean_phi,
        mean_abs_phi,
        mean_stderr: stderr,
        ranking,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution<T> {
    pub feature: String,
    pub value: Cell<T>,
    pub phi: T,
}

/// Attributions of one prediction split by sign, each side by decreasing
/// magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown<T> {
    pub base_value: T,
    pub prediction: T,
    pub increasing: Vec<Contribution<T>>,
    pub decreasing: Vec<Contribution<T>>,
    pub report: ShapReport<T>,
}

impl<T: Scalar> Breakdown<T> {
    pub fn from_report(report: ShapReport<T>, names: &[String], instance: &[Cell<T>]) -> Self {
        let mut order: Vec<usize> = (0..report.phi.len()).collect();
        order.sort_by(|&a, &b| {
            report.phi[b].abs().partial_cmp(&report.phi[a].abs()).expect("finite").then(a.cmp(&b))
        });
        let make = |j: usize| Contribution {
            feature: names[j].clone(),
            value: instance[j],
            phi: report.phi[j],
        };
        Breakdown {
            base_value: report.base_value,
            prediction: report.prediction,
            increasing: order.iter().filter(|&&j| report.phi[j] > T::zero()).map(|&j| make(j)).collect(),
            decreasing: order.iter().filter(|&&j| report.phi[j] < T::zero()).map(|&j| make(j)).collect(),
            report,
        }
    }

    /// base + Σφ.
    pub fn reconstructed(&self) -> T {
        self.base_value + self.report.phi.iter().copied().sum::<T>()
    }

    /// Rows: base, increasing features, decreasing features, prediction, and
    /// the efficiency check base + Σφ.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "feature", "value", "phi"])?;
        w.write_record(["base", "", "", &self.base_value.to_string()])?;
        for (kind, list) in [("increasing", &self.increasing), ("decreasing", &self.decreasing)] {
            for c in list {
                let v = c.value.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([kind, &c.feature, &v, &c.phi.to_string()])?;
            }
        }
        w.write_record(["prediction", "", "", &self.prediction.to_string()])?;
        w.write_record(["base_plus_sum_phi", "", "", &self.reconstructed().to_string()])?;
        w.flush()?;
        Ok(())
    }
}

pub fn explain_prediction<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    names: &[String],
    instance: &[Cell<T>],
    background: &[Vec<Cell<T>>],
    config: EstimatorConfig,
    seed: u64,
) -> Result<Breakdown<T>, ShapError> {
    if names.len() != instance.len() {
        return Err(ShapError::DimensionMismatch(format!(
            "{} names for {} features",
            names.len(),
            instance.len()
        )));
    }
    let report = explain_row(model, instance, background, config, seed)?;
    Ok(Breakdown::from_report(report, names, instance))
}
