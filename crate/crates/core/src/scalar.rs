//! Scalar abstraction shared by the geometry and optimization code.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the rigid-body and pose-graph math: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Lossy conversion from an `f64` literal or parameter.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    /// Widening conversion used by file formats and reports.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
