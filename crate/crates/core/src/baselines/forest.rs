use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BaselineError, Task};
use crate::booster::{grow_presorted, HyperParams, SortedColumns, Tree};
use crate::data::{Column, FeatureMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ForestOptions {
    pub n_trees: usize,
    /// Tree shape settings: max_depth, min_child_weight, gamma, reg_lambda
    /// and colsample_bytree are used; the boosting fields are ignored.
    pub params: HyperParams,
    pub seed: u64,
    pub task: Task,
    /// When false every tree sees each row exactly once.
    pub bootstrap: bool,
}

impl ForestOptions {
    pub fn new(n_trees: usize, params: HyperParams, seed: u64, task: Task) -> Self {
        ForestOptions {
            n_trees,
            params,
            seed,
            task,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestTree<T> {
    pub tree: Tree<T>,
    /// Bootstrap-weighted target mean the tree's leaves are relative to.
    pub offset: T,
    pub seed: u64,
}

impl<T: Scalar> ForestTree<T> {
    pub fn predict_row(&self, row: &[Option<T>]) -> T {
        self.offset + self.tree.predict_row(row)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel<T> {
    pub trees: Vec<ForestTree<T>>,
    pub task: Task,
    pub params: HyperParams,
    pub schema: Vec<Column>,
    /// Out-of-bag mean squared error (regression) or error rate
    /// (classification); absent without bootstrap or when no row is ever
    /// left out.
    pub oob_error: Option<T>,
}

impl<T: Scalar> ForestModel<T> {
    /// Mean tree output; for classification the fraction of trees voting 1
    /// is returned by [`ForestModel::vote_share`] instead.
    pub fn mean_output(&self, row: &[Option<T>]) -> T {
        let s: T = self.trees.iter().map(|t| t.predict_row(row)).sum();
        s / T::of(self.trees.len() as f64)
    }

    pub fn vote_share(&self, row: &[Option<T>]) -> T {
        let ones = self.trees.iter().filter(|t| vote(t.predict_row(row))).count();
        T::of(ones as f64 / self.trees.len() as f64)
    }

    pub fn predict_row(&self, row: &[Option<T>]) -> T {
        match self.task {
            Task::Regress => self.mean_output(row),
            Task::Classify => {
                // Majority vote; ties go to class 1.
                if self.vote_share(row) >= T::of(0.5) {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

fn vote<T: Scalar>(output: T) -> bool {
    output >= T::of(0.5)
}

pub fn forest_predict<T: Scalar>(model: &ForestModel<T>, matrix: &FeatureMatrix<T>) -> Vec<T> {
    matrix.rows().map(|r| model.predict_row(r)).collect()
}

pub fn forest_fit<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    n_trees: usize,
    params: &HyperParams,
    seed: u64,
    task: Task,
) -> Result<ForestModel<T>, BaselineError> {
    forest_fit_with(matrix, targets, &ForestOptions::new(n_trees, params.clone(), seed, task))
}

/// Bagged regression trees grown with the booster's exact split finder on
/// squared-error residuals about the bootstrap mean (g = c·(mean − y),
/// h = c for a row drawn c times). Per-tree seeds come from the master seed
/// in tree order, so parallel growth is deterministic.
pub fn forest_fit_with<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    options: &ForestOptions,
) -> Result<ForestModel<T>, BaselineError> {
    let n = matrix.n_rows();
    if targets.len() != n {
        return Err(BaselineError::DimensionMismatch(format!("{n} rows but {} targets", targets.len())));
    }
    if n == 0 {
        return Err(BaselineError::EmptyInput);
    }
    if options.n_trees == 0 {
        return Err(BaselineError::InvalidParam("n_trees must be at least 1".into()));
    }
    let p = &options.params;
    if !(p.colsample_bytree > 0.0 && p.colsample_bytree <= 1.0) {
        return Err(BaselineError::InvalidParam("colsample_bytree must lie in (0, 1]".into()));
    }
    let sorted = SortedColumns::new(matrix);
    let mut master = ChaCha8Rng::seed_from_u64(options.seed);
    let seeds: Vec<u64> = (0..options.n_trees).map(|_| master.next_u64()).collect();
    let n_cols = matrix.n_cols();
    let n_sampled = ((p.colsample_bytree * n_cols as f64).round() as usize).clamp(1.min(n_cols), n_cols);

    let grow = |&seed: &u64| -> (ForestTree<T>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u32; n];
        if options.bootstrap {
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        } else {
            counts.fill(1);
        }
        let mut col_mask = vec![n_sampled == n_cols; n_cols];
        if n_sampled < n_cols {
            for c in sample(&mut rng, n_cols, n_sampled) {
                col_mask[c] = true;
            }
        }
        let total: T = counts.iter().map(|&c| T::of(c as f64)).sum();
        let offset = counts
            .iter()
            .zip(targets)
            .map(|(&c, &y)| T::of(c as f64) * y)
            .sum::<T>()
            / total;
        let hess: Vec<T> = counts.iter().map(|&c| T::of(c as f64)).collect();
        let grad: Vec<T> = targets.iter().zip(&hess).map(|(&y, &c)| c * (offset - y)).collect();
        let row_mask: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let tree = grow_presorted(matrix, &sorted, &grad, &hess, &row_mask, &col_mask, p);
        (ForestTree { tree, offset, seed }, counts)
    };
    let grown: Vec<(ForestTree<T>, Vec<u32>)> = seeds.par_iter().map(grow).collect();

    let oob_error = if options.bootstrap { oob(matrix, targets, options.task, &grown) } else { None };
    Ok(ForestModel {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        task: options.task,
        params: p.clone(),
        schema: matrix.schema().to_vec(),
        oob_error,
    })
}

fn oob<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    task: Task,
    grown: &[(ForestTree<T>, Vec<u32>)],
) -> Option<T> {
    let mut loss = T::zero();
    let mut rows = 0usize;
    for (r, row) in matrix.rows().enumerate() {
        let outs: Vec<T> = grown
            .iter()
            .filter(|(_, counts)| counts[r] == 0)
            .map(|(t, _)| t.predict_row(row))
            .collect();
        if outs.is_empty() {
            continue;
        }
        rows += 1;
        match task {
            Task::Regress => {
                let m = outs.iter().copied().sum::<T>() / T::of(outs.len() as f64);
                loss += (m - targets[r]) * (m - targets[r]);
            }
            Task::Classify => {
                let ones = outs.iter().filter(|&&o| vote(o)).count();
                let label = if 2 * ones >= outs.len() { T::one() } else { T::zero() };
                if label != targets[r] {
                    loss += T::one();
                }
            }
        }
    }
    (rows > 0).then(|| loss / T::of(rows as f64))
}
