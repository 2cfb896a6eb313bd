//! Floating-point scalar abstraction for the analysis core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for loss values, scores, thresholds, and weights: `f32` or
/// `f64` (or any other IEEE-like float that satisfies the bounds).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough round-trip through `f64`, the on-disk cell type.
    fn from_f64_cell(value: f64) -> Self {
        Self::from_f64(value).expect("f64 converts to scalar")
    }

    fn to_f64_cell(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum<T>
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
