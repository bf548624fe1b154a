//! Floating-point scalar abstraction shared by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Loss evaluation, objective assembly and the optimizer are written against
/// this trait. Privacy calibration always runs in `f64` and is converted at the
/// boundary with [`Scalar::of`].
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon as an `f64`.
    const EPS_F64: f64;

    /// Lossy conversion from `f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Scalar for f32 {
    const EPS_F64: f64 = f32::EPSILON as f64;
}

impl Scalar for f64 {
    const EPS_F64: f64 = f64::EPSILON;
}
