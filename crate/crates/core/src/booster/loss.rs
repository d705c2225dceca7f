use serde::{Deserialize, Serialize};

use super::BoosterError;
use crate::scalar::Scalar;

/// Smallest curvature handed to the tree builder.
pub const DEFAULT_CURVATURE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    /// Binary cross-entropy on logits.
    Logistic,
    Absolute,
    /// Absolute percentage error.
    Mape,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::Logistic => "logistic",
            LossKind::Absolute => "absolute",
            LossKind::Mape => "mape",
        }
    }

    pub fn requires_positive_target(self) -> bool {
        self == LossKind::Mape
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "squared_error" | "squared" | "mse" => Ok(LossKind::SquaredError),
            "logistic" => Ok(LossKind::Logistic),
            "absolute" | "mae" => Ok(LossKind::Absolute),
            "mape" => Ok(LossKind::Mape),
            _ => Err(format!("unknown loss `{s}`")),
        }
    }
}

/// A training loss with its curvature floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub curvature_floor: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            curvature_floor: DEFAULT_CURVATURE_FLOOR,
        }
    }

    /// Per-row loss value, the function whose derivative
    /// [`loss_derivatives`] returns.
    pub fn value<T: Scalar>(&self, y: T, yhat: T) -> T {
        match self.kind {
            LossKind::SquaredError => T::of(0.5) * (yhat - y) * (yhat - y),
            LossKind::Logistic => {
                // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
                softplus(yhat) - y * yhat
            }
            LossKind::Absolute => (yhat - y).abs(),
            LossKind::Mape => (yhat - y).abs() / y,
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(z: T) -> T {
    // ln(1 + e^z) without overflow
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Gradient and curvature of the per-row loss with respect to the raw
/// prediction:
///
/// * squared error: g = ŷ − y, h = 1
/// * logistic (ŷ a logit): g = σ(ŷ) − y, h = σ(ŷ)(1 − σ(ŷ)), floored
/// * absolute: g = sign(ŷ − y), h = floor
/// * mape: g = sign(ŷ − y)/y, h = max(1/y, floor)
pub fn loss_derivatives<T: Scalar>(loss: &LossSpec, y: &[T], yhat: &[T]) -> Result<(Vec<T>, Vec<T>), BoosterError> {
    if y.len() != yhat.len() {
        return Err(BoosterError::DimensionMismatch(format!(
            "{} targets vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let floor = T::of(loss.curvature_floor);
    let mut grad = Vec::with_capacity(y.len());
    let mut hess = Vec::with_capacity(y.len());
    for (i, (&y, &p)) in y.iter().zip(yhat).enumerate() {
        let (g, h) = match loss.kind {
            LossKind::SquaredError => (p - y, T::one()),
            LossKind::Logistic => {
                let s = sigmoid(p);
                (s - y, (s * (T::one() - s)).max(floor))
            }
            LossKind::Absolute => (sign(p - y), floor),
            LossKind::Mape => {
                if !(y > T::zero()) {
                    return Err(BoosterError::NonPositiveTarget(i));
                }
                (sign(p - y) / y, (T::one() / y).max(floor))
            }
        };
        grad.push(g);
        hess.push(h);
    }
    Ok((grad, hess))
}
