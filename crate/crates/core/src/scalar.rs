//! Scalar abstraction for the geometric core.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the geometry is generic over.
///
/// Implemented for `f32` and `f64` through the blanket impl; the crate-root
/// aliases fix `f64` for the measurement pipelines.
pub trait Scalar: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display {
    /// Lifts an `f64` constant into this scalar type.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("finite constant representable in scalar type")
    }
}

impl<T> Scalar for T where T: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display {}
