//! Scalar abstraction for the distribution-level math.
//!
//! Distribution primitives, EDF statistics, stopping rules and the return
//! level formula are written against [`Scalar`] so they run in `f32` or
//! `f64`. The estimation and simulation layers work in `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

pub trait Scalar: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant; every literal used by this crate is representable.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Below this magnitude the shape parameter is treated as exactly zero.
    fn shape_zero_tol() -> Self {
        Self::lit(1e-12)
    }
}

impl Scalar for f32 {
    fn shape_zero_tol() -> Self {
        // 1e-12 is far below f32 resolution of any shape estimate
        1e-7
    }
}

impl Scalar for f64 {}

/// `ln(1 + x) / x`, continuous at zero.
pub fn log1p_over<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(1e-4) {
        // 1 - x/2 + x^2/3 - x^3/4
        T::one() - x * (T::lit(0.5) - x * (T::lit(1.0 / 3.0) - x * T::lit(0.25)))
    } else {
        x.ln_1p() / x
    }
}

/// `(e^x - 1) / x`, continuous at zero.
pub fn expm1_over<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(1e-4) {
        T::one() + x * (T::lit(0.5) + x * (T::lit(1.0 / 6.0) + x * T::lit(1.0 / 24.0)))
    } else {
        x.exp_m1() / x
    }
}
