//! Scalar abstractions.
//!
//! Everything that integrates, samples or differentiates is written against
//! [`Scalar`] (implemented for `f32` and `f64`). Pure arithmetic on
//! hyperparameters, such as the effective temperature, only needs a
//! [`Field`], which additionally admits exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, Num, NumAssign, Signed, ToPrimitive};

/// Floating point type used by the numerical parts of the crate.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Infallible for the implemented types.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(value: usize) -> Self {
        Self::from_usize(value).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ordered field: enough structure for closed-form hyperparameter arithmetic.
pub trait Field: Num + Signed + Clone + PartialOrd + FromPrimitive + Debug {}

impl<T> Field for T where T: Num + Signed + Clone + PartialOrd + FromPrimitive + Debug {}
