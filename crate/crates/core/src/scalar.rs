//! Scalar abstraction for the differentiation engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by [`crate::tensor::Tensor`] and
/// [`crate::tape::Tape`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only on values no float can
    /// represent (never happens for the constants used in this crate).
    fn from_lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal out of range for scalar type")
    }

    fn to_double(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
