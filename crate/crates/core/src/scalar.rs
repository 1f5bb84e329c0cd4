//! Floating-point scalar abstraction shared by the numeric modules.

use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used by the transforms, descriptors and learners: `f32` or `f64`.
pub trait Scalar: NdFloat + FloatConst + FromPrimitive + ToPrimitive + Default + Sum {
    /// Converts an `f64` literal; infallible for the float types implementing this trait.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
