//! Scalar abstractions.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num};

/// Floating-point type the estimators and the matcher operate on.
///
/// Blanket-implemented for every type satisfying the bounds, which covers
/// `f32` and `f64`.
pub trait Scalar: Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Lossless-where-possible conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Conversion from an `f64` constant.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {}

/// Ordered field arithmetic only: `+ - * /` and comparisons.
///
/// Used where formulas are rational functions of their inputs, so they can
/// be evaluated either in floating point or exactly (e.g. with
/// `num_rational::BigRational`).
pub trait Field: Clone + PartialOrd + Num + FromPrimitive + Debug {}

impl<T> Field for T where T: Clone + PartialOrd + Num + FromPrimitive + Debug {}
