//! Scalar abstraction shared by the analytic model.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar usable by the analytic formulas: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts an integer charge into the scalar type.
    #[inline]
    fn from_charge(l: i32) -> Self {
        Self::from_i32(l).expect("charge representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
