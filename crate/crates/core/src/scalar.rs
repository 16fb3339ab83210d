//! Numeric traits shared by the math modules.
//!
//! [`Numeric`] is the weakest bound: ordered signed arithmetic with exact
//! conversion from small integers. It is enough for the counting-based
//! fairness metrics, so those also run over exact rationals.
//! [`Scalar`] adds floating point and is what the optimization code needs.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, Num, NumAssign, Signed, ToPrimitive};

pub trait Numeric: Num + Signed + PartialOrd + Copy + FromPrimitive + Debug {}

impl<T> Numeric for T where T: Num + Signed + PartialOrd + Copy + FromPrimitive + Debug {}

pub trait Scalar:
    Numeric
    + Float
    + NumAssign
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot hold,
    /// which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Numeric
        + Float
        + NumAssign
        + ToPrimitive
        + ScalarOperand
        + Sum
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
