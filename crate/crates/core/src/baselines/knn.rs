use serde::{Deserialize, Serialize};

use super::{BaselineError, MedianImputer, Standardizer, Task};
use crate::data::{Column, FeatureMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel<T> {
    pub k: usize,
    pub task: Task,
    pub imputer: MedianImputer<T>,
    pub standardizer: Standardizer<T>,
    /// Imputed and standardized training rows.
    pub rows: Vec<Vec<T>>,
    pub targets: Vec<T>,
    pub schema: Vec<Column>,
}

pub fn knn_fit<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    k: usize,
    task: Task,
) -> Result<KnnModel<T>, BaselineError> {
    let n = matrix.n_rows();
    if targets.len() != n {
        return Err(BaselineError::DimensionMismatch(format!("{n} rows but {} targets", targets.len())));
    }
    if k == 0 {
        return Err(BaselineError::InvalidParam("k must be at least 1".into()));
    }
    if k > n {
        return Err(BaselineError::KTooLarge { k, n });
    }
    let imputer = MedianImputer::fit(matrix);
    let dense = imputer.transform(matrix);
    let standardizer = Standardizer::fit(&dense);
    Ok(KnnModel {
        k,
        task,
        rows: standardizer.transform(&dense),
        imputer,
        standardizer,
        targets: targets.to_vec(),
        schema: matrix.schema().to_vec(),
    })
}

impl<T: Scalar> KnnModel<T> {
    /// Training-row indices of the k nearest neighbours, nearest first;
    /// equal distances keep the lower row index.
    pub fn neighbours(&self, row: &[Option<T>]) -> Vec<usize> {
        let q = self.standardizer.transform_row(&self.imputer.transform_row(row));
        let mut d: Vec<(T, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (*a - *b) * (*a - *b)).sum(), i))
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    pub fn predict_row(&self, row: &[Option<T>]) -> T {
        let nb = self.neighbours(row);
        match self.task {
            Task::Regress => nb.iter().map(|&i| self.targets[i]).sum::<T>() / T::of(nb.len() as f64),
            Task::Classify => {
                let ones = nb.iter().filter(|&&i| self.targets[i] == T::one()).count();
                // Ties go to class 1.
                if 2 * ones >= nb.len() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

pub fn knn_predict<T: Scalar>(model: &KnnModel<T>, matrix: &FeatureMatrix<T>) -> Vec<T> {
    matrix.rows().map(|r| model.predict_row(r)).collect()
}
