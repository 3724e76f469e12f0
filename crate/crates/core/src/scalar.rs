//! Floating point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the mapping engine can run on: `f32` or `f64`.
///
/// `rstar::RTreeNum` is required so the scalar can key the spatial indices
/// directly without conversion.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + rstar::RTreeNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only for values not representable at all.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative precision used for "exact" geometric comparisons.
    fn geometric_eps() -> Self;
}

impl Scalar for f32 {
    fn geometric_eps() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn geometric_eps() -> Self {
        1e-12
    }
}
