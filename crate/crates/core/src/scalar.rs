//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating-point type the solvers are generic over (`f32` or `f64`).
///
/// Tolerances throughout the crate are written for `f64`; running in `f32`
/// only makes sense with correspondingly loose settings.
pub trait Scalar: RealField + Copy + ToPrimitive + Display + Debug + Send + Sync + 'static {
    /// Converts an `f64` literal into this scalar type.
    fn lit(value: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }

    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Scalar for f32 {
    fn lit(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    fn lit(value: f64) -> Self {
        value
    }
}
