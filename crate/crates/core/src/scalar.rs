//! Scalar abstraction shared by the numeric modules.

use nalgebra as na;
use num_traits as nt;

/// Floating point type the perception, identification and control math is
/// generic over. Implemented for `f32` and `f64`.
pub trait Real:
    Copy
    + na::RealField
    + nt::FloatConst
    + nt::FromPrimitive
    + nt::ToPrimitive
    + rustfft::FftNum
    + std::fmt::Display
{
    /// Converts an `f64` literal. Lossy for `f32`, never fails.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
