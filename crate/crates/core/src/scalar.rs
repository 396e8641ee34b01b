use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the model math is written against.
///
/// Implemented for `f32` and `f64`. Conversions to and from `f32` exist
/// because embeddings and checkpoints are stored in single precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn widen(x: f32) -> Self;

    fn narrow(self) -> f32;

    /// Lossless widening used for reporting and metric accumulation.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("literal fits in scalar")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count fits in scalar")
    }
}

impl Scalar for f32 {
    #[inline]
    fn widen(x: f32) -> Self {
        x
    }

    #[inline]
    fn narrow(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(x: f32) -> Self {
        x as f64
    }

    #[inline]
    fn narrow(self) -> f32 {
        self as f32
    }
}
