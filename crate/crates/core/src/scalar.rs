//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the learners, metrics and explainers are generic over.
///
/// Implemented for `f32` and `f64`. Configuration values (hyperparameters,
/// thresholds, radii) stay `f64` and are converted with [`Scalar::of`].
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let n = T::of(values.len() as f64);
    Some(values.iter().copied().sum::<T>() / n)
}

/// Population standard deviation (divisor n).
pub fn std_dev<T: Scalar>(values: &[T]) -> Option<T> {
    let m = mean(values)?;
    let n = T::of(values.len() as f64);
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    Some((ss / n).sqrt())
}

/// Median of the values (average of the two middle elements for even counts).
pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median of finite values"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some((sorted[mid - 1] + sorted[mid]) / T::of(2.0))
    }
}
