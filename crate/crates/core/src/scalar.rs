//! Scalar abstraction so the same code runs in f32 (training, files on disk)
//! and f64 (oracles, finite-difference gradient checks).

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from f64. Every finite f64 is representable (possibly with
    /// rounding), which is all the call sites need.
    fn of(v: f64) -> Self {
        FromPrimitive::from_f64(v).expect("finite f64 converts to Real")
    }

    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }

    fn as_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("Real converts to f32")
    }

    fn half() -> Self {
        Self::of(0.5)
    }

    fn two() -> Self {
        Self::of(2.0)
    }

    fn clamp01(self) -> Self {
        if self < Self::zero() {
            Self::zero()
        } else if self > Self::one() {
            Self::one()
        } else {
            self
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
