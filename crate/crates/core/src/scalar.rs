use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type of tensors, models and optimizers.
///
/// Training runs in `f32`; gradient checks and estimator statistics run in
/// `f64`.
pub trait Scalar: Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from `f64`. Never fails for finite inputs.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }

    #[inline]
    fn as_f32(self) -> f32 {
        num_traits::ToPrimitive::to_f32(&self).expect("Scalar converts to f32")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
