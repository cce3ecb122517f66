//! Scalar abstraction so the same kernels run in single precision (training)
//! and double precision (oracle and gradient tests).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Real scalar usable in every tensor and layer kernel.
pub trait Scalar:
    Float + NumAssignOps + Sum + Copy + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Machine epsilon scale used by numerically-guarded kernels.
    fn eps() -> Self {
        Self::epsilon()
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
