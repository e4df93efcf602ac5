//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FloatConst, NumAssign};
use rustfft::FftNum;

/// Real floating point type the signal chain runs on: `f32` or `f64`.
pub trait Real:
    FftNum + Float + FloatConst + NumAssign + ScalarOperand + Default + Display + LowerExp + Sum + Debug + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: FftNum + Float + FloatConst + NumAssign + ScalarOperand + Default + Display + LowerExp + Sum + Debug + 'static
{
}
