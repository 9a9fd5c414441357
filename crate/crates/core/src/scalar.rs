//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar usable by the solvers (`f32`, `f64`).
///
/// `RealField` brings in both `ComplexField::abs` and `Signed::abs`, which
/// makes plain `x.abs()` ambiguous in generic code; use [`Scalar::magnitude`]
/// instead.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn magnitude(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    #[inline]
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }

    /// Machine epsilon of the concrete type.
    fn eps() -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Scalar for f32 {
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

/// Largest absolute entry of a slice (0 for an empty slice).
pub fn max_abs<T: Scalar>(xs: &[T]) -> T {
    xs.iter()
        .fold(T::zero(), |m, &v| if v.magnitude() > m { v.magnitude() } else { m })
}
