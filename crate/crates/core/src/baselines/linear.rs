use serde::{Deserialize, Serialize};

use super::{BaselineError, MedianImputer, Standardizer};
use crate::booster::sigmoid;
use crate::data::{Column, FeatureMatrix};
use crate::scalar::Scalar;

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Ridge regression.
    Identity,
    /// L2-penalized logistic regression; predictions are probabilities.
    Logit,
}

/// Linear model with weights in the units of the original columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub link: Link,
    pub ridge_alpha: f64,
    pub imputer: MedianImputer<T>,
    pub schema: Vec<Column>,
    /// Newton iterations used by the logistic fit (0 for ridge).
    pub iterations: usize,
}

impl<T: Scalar> LinearModel<T> {
    pub fn predict_row(&self, row: &[Option<T>]) -> T {
        let x = self.imputer.transform_row(row);
        let eta = self.intercept + x.iter().zip(&self.weights).map(|(a, w)| *a * *w).sum::<T>();
        match self.link {
            Link::Identity => eta,
            Link::Logit => sigmoid(eta),
        }
    }
}

pub fn linear_predict<T: Scalar>(model: &LinearModel<T>, matrix: &FeatureMatrix<T>) -> Vec<T> {
    matrix.rows().map(|r| model.predict_row(r)).collect()
}

/// Fits on median-imputed, standardized columns. Columns that are constant on
/// the training rows get weight 0. The intercept is never penalized.
pub fn linear_fit<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    link: Link,
    ridge_alpha: f64,
) -> Result<LinearModel<T>, BaselineError> {
    let n = matrix.n_rows();
    if targets.len() != n {
        return Err(BaselineError::DimensionMismatch(format!("{n} rows but {} targets", targets.len())));
    }
    if n == 0 {
        return Err(BaselineError::EmptyInput);
    }
    if !(ridge_alpha >= 0.0 && ridge_alpha.is_finite()) {
        return Err(BaselineError::InvalidParam(format!("ridge_alpha = {ridge_alpha}")));
    }
    let imputer = MedianImputer::fit(matrix);
    let dense = imputer.transform(matrix);
    let standardizer = Standardizer::fit(&dense);
    let z = standardizer.transform(&dense);
    let active: Vec<usize> = (0..matrix.n_cols())
        .filter(|&c| z.iter().any(|r| r[c] != T::zero()))
        .collect();
    let za: Vec<Vec<T>> = z.iter().map(|r| active.iter().map(|&c| r[c]).collect()).collect();
    let alpha = T::of(ridge_alpha);

    let (w_active, b_std, iterations) = match link {
        Link::Identity => {
            let ybar = targets.iter().copied().sum::<T>() / T::of(n as f64);
            let yc: Vec<T> = targets.iter().map(|&v| v - ybar).collect();
            (solve_ridge(&za, &yc, alpha)?, ybar, 0)
        }
        Link::Logit => {
            if targets.iter().any(|&v| v != T::zero() && v != T::one()) {
                return Err(BaselineError::InvalidParam("logistic targets must be 0 or 1".into()));
            }
            irls(&za, targets, alpha)?
        }
    };

    let mut weights = vec![T::zero(); matrix.n_cols()];
    let mut intercept = b_std;
    for (j, &c) in active.iter().enumerate() {
        weights[c] = w_active[j] / standardizer.scale[c];
        intercept -= weights[c] * standardizer.mean[c];
    }
    if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() {
        return Err(BaselineError::SingularSystem);
    }
    Ok(LinearModel {
        weights,
        intercept,
        link,
        ridge_alpha,
        imputer,
        schema: matrix.schema().to_vec(),
        iterations,
    })
}

/// Solves (ZᵀZ + αI) w = Zᵀy by Cholesky factorization.
pub fn solve_ridge<T: Scalar>(z: &[Vec<T>], y: &[T], alpha: T) -> Result<Vec<T>, BaselineError> {
    let p = z.first().map_or(0, Vec::len);
    let mut a = vec![vec![T::zero(); p]; p];
    let mut rhs = vec![T::zero(); p];
    for (row, &t) in z.iter().zip(y) {
        for i in 0..p {
            rhs[i] += row[i] * t;
            for j in 0..=i {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        a[i][i] += alpha;
        for j in 0..i {
            a[j][i] = a[i][j];
        }
    }
    cholesky_solve(a, rhs).ok_or(BaselineError::SingularSystem)
}

fn cholesky_solve<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let p = b.len();
    let max_diag = (0..p).map(|i| a[i][i].abs()).fold(T::zero(), T::max);
    let tiny = T::epsilon() * T::of(1e4) * max_diag.max(T::one());
    for j in 0..p {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > tiny) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..p {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    Some(b)
}

fn penalized_nll<T: Scalar>(z: &[Vec<T>], y: &[T], b: T, w: &[T], alpha: T) -> T {
    let mut s = T::zero();
    for (row, &t) in z.iter().zip(y) {
        let eta = b + row.iter().zip(w).map(|(a, c)| *a * *c).sum::<T>();
        s += eta.max(T::zero()) + (-eta.abs()).exp().ln_1p() - t * eta;
    }
    s + T::of(0.5) * alpha * w.iter().map(|v| *v * *v).sum::<T>()
}

/// Newton's method (iteratively reweighted least squares) with backtracking.
/// Returns (weights, intercept, iterations).
fn irls<T: Scalar>(z: &[Vec<T>], y: &[T], alpha: T) -> Result<(Vec<T>, T, usize), BaselineError> {
    let n = z.len();
    let p = z.first().map_or(0, Vec::len);
    let tol = T::of(GRADIENT_TOLERANCE).max(T::epsilon() * T::of(100.0 * n as f64));
    let mut w = vec![T::zero(); p];
    let mut b = T::zero();
    let mut obj = penalized_nll(z, y, b, &w, alpha);
    for it in 0..MAX_ITERATIONS {
        // Parameter 0 is the intercept.
        let mut grad = vec![T::zero(); p + 1];
        let mut hess = vec![vec![T::zero(); p + 1]; p + 1];
        for (row, &t) in z.iter().zip(y) {
            let eta = b + row.iter().zip(&w).map(|(a, c)| *a * *c).sum::<T>();
            let mu = sigmoid(eta);
            let r = mu - t;
            let wt = mu * (T::one() - mu);
            grad[0] += r;
            hess[0][0] += wt;
            for i in 0..p {
                grad[i + 1] += r * row[i];
                hess[i + 1][0] += wt * row[i];
                for j in 0..=i {
                    hess[i + 1][j + 1] += wt * row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            grad[i + 1] += alpha * w[i];
            hess[i + 1][i + 1] += alpha;
        }
        for i in 0..=p {
            for j in 0..i {
                hess[j][i] = hess[i][j];
            }
        }
        let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
        if norm <= tol {
            return Ok((w, b, it));
        }
        let step = cholesky_solve(hess, grad.clone()).ok_or(BaselineError::SingularSystem)?;
        let slope: T = grad.iter().zip(&step).map(|(g, s)| *g * *s).sum();
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let nb = b - t * step[0];
            let nw: Vec<T> = w.iter().zip(&step[1..]).map(|(v, s)| *v - t * *s).collect();
            let nobj = penalized_nll(z, y, nb, &nw, alpha);
            if nobj <= obj - T::of(1e-4) * t * slope {
                b = nb;
                w = nw;
                obj = nobj;
                accepted = true;
                break;
            }
            t *= T::of(0.5);
        }
        if !accepted {
            // No representable decrease remains along the Newton direction.
            return Ok((w, b, it + 1));
        }
    }
    Err(BaselineError::NoConvergence(MAX_ITERATIONS))
}
