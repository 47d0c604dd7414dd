//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the planners, estimators and simulator are written against.
///
/// Implemented for `f32` and `f64`. Tolerances that callers pass in are clamped
/// from below by [`Scalar::tolerance_floor`] so that `f32` runs do not spin on
/// thresholds finer than the type can resolve.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest tolerance that is meaningful for accumulated sums of this type.
    #[inline]
    fn tolerance_floor() -> Self {
        Self::epsilon() * Self::lit(64.0)
    }

    /// Tolerance used when checking that a probability vector sums to one.
    #[inline]
    fn simplex_tolerance() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(16.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `max(x, floor)` applied to a user tolerance.
#[inline]
pub(crate) fn effective_tol<T: Scalar>(tol: T) -> T {
    tol.max(T::tolerance_floor())
}

#[inline]
pub(crate) fn span<T: Scalar>(xs: &[T]) -> T {
    let (lo, hi) = min_max(xs);
    hi - lo
}

#[inline]
pub(crate) fn min_max<T: Scalar>(xs: &[T]) -> (T, T) {
    xs.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
