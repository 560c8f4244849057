//! Scalar abstraction shared by every module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits as nt;

/// Floating point scalar the engine is generic over (`f32` or `f64`).
pub trait Real:
    nt::Float
    + nt::FloatConst
    + nt::FromPrimitive
    + nt::ToPrimitive
    + nt::NumAssign
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Tolerance used when checking that a vector lies on the unit sphere.
    fn unit_tol() -> Self;

    /// Literal conversion; every finite `f64` is representable up to rounding.
    #[inline(always)]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline(always)]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the scalar type")
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn unit_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn unit_tol() -> Self {
        1e-12
    }
}
