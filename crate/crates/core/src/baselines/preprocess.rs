use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::scalar::{median, Scalar};

/// Replaces missing cells with per-column training medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianImputer<T> {
    pub medians: Vec<T>,
}

impl<T: Scalar> MedianImputer<T> {
    /// Medians of the present values; a column with no present value gets 0.
    pub fn fit(matrix: &FeatureMatrix<T>) -> Self {
        let medians = (0..matrix.n_cols())
            .map(|c| {
                let present: Vec<T> = matrix.column(c).flatten().collect();
                median(&present).unwrap_or_else(T::zero)
            })
            .collect();
        MedianImputer { medians }
    }

    pub fn transform(&self, matrix: &FeatureMatrix<T>) -> Vec<Vec<T>> {
        matrix.rows().map(|r| self.transform_row(r)).collect()
    }

    pub fn transform_row(&self, row: &[Option<T>]) -> Vec<T> {
        row.iter().zip(&self.medians).map(|(v, m)| v.unwrap_or(*m)).collect()
    }
}

/// Column centering and scaling by the population standard deviation.
/// Constant columns keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(rows: &[Vec<T>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let n = T::of(rows.len().max(1) as f64);
        let mut mean = vec![T::zero(); n_cols];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += *v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![T::zero(); n_cols];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (*v - *m) * (*v - *m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::zero() && sd.is_finite() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform_row(&self, row: &[T]) -> Vec<T> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (*v - *m) / *s)
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<T>]) -> Vec<Vec<T>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}
