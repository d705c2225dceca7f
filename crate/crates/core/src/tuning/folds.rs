use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TuningError;
use crate::scalar::Scalar;

/// Assignment of every row to one of `k` test folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.assignments[r] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.assignments[r] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_k(k: usize) -> Result<(), TuningError> {
    if k < 2 {
        Err(TuningError::InvalidK(k))
    } else {
        Ok(())
    }
}

/// Stratified folds: the rows of each class are shuffled and dealt
/// round-robin, positives first; the deal continues into the negatives
/// where the positives stopped so fold sizes stay balanced too.
pub fn stratified_folds<T: Scalar>(labels: &[T], k: usize, seed: u64) -> Result<FoldPlan, TuningError> {
    check_k(k)?;
    if let Some(i) = labels.iter().position(|&v| v != T::zero() && v != T::one()) {
        return Err(TuningError::NonBinaryLabel(i));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == T::one()).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == T::zero()).collect();
    for (class, rows) in [(1u8, &positives), (0u8, &negatives)] {
        if rows.len() < k {
            return Err(TuningError::ClassTooSmall {
                class,
                count: rows.len(),
                k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for mut rows in [positives, negatives] {
        rows.shuffle(&mut rng);
        for r in rows {
            assignments[r] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified: true,
        seed,
    })
}

/// Plain k-fold: rows shuffled and dealt round-robin.
pub fn kfold(n_rows: usize, k: usize, seed: u64) -> Result<FoldPlan, TuningError> {
    check_k(k)?;
    if n_rows < k {
        return Err(TuningError::TooFewRows { n: n_rows, k });
    }
    let mut rows: Vec<usize> = (0..n_rows).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n_rows];
    for (i, r) in rows.into_iter().enumerate() {
        assignments[r] = i % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified: false,
        seed,
    })
}
