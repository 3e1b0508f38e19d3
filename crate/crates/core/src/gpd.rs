//! Generalized Pareto distribution primitives.
//!
//! All functions take values on the *exceedance* scale relative to
//! [`GpdParams::threshold`]: a raw value `x` maps to `y = x - threshold`.
//! The CDF is
//!
//! ```text
//! F(y) = 1 - (1 + ξ y / σ)^(-1/ξ)     ξ ≠ 0
//! F(y) = 1 - exp(-y / σ)              ξ = 0
//! ```
//!
//! with support `y ≥ 0` and, for `ξ < 0`, `y < -σ/ξ`. Every formula is
//! evaluated through `ln_1p`/`exp_m1`, which keeps it continuous in `ξ`
//! across zero; below [`Scalar::shape_zero_tol`] the exponential branch is
//! used outright.

use crate::error::{domain, Error, Result};
use crate::rng::StreamRng;
use crate::scalar::{expm1_over, log1p_over, Scalar};
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams<T> {
    pub scale: T,
    pub shape: T,
    pub threshold: T,
}

impl<T: Scalar> GpdParams<T> {
    /// Parameters for exceedances over a zero threshold.
    pub fn new(scale: T, shape: T) -> Result<Self> {
        Self::with_threshold(scale, shape, T::zero())
    }

    pub fn with_threshold(scale: T, shape: T, threshold: T) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(domain(format!("scale must be positive and finite, got {scale}")));
        }
        if !shape.is_finite() || !threshold.is_finite() {
            return Err(domain("shape and threshold must be finite"));
        }
        Ok(Self { scale, shape, threshold })
    }

    #[inline]
    fn is_exponential(&self) -> bool {
        self.shape.abs() < T::shape_zero_tol()
    }

    /// Upper end of the exceedance support: `-σ/ξ` for `ξ < 0`, else `+∞`.
    pub fn upper_endpoint(&self) -> T {
        if self.shape < T::zero() && !self.is_exponential() {
            -self.scale / self.shape
        } else {
            T::infinity()
        }
    }

    /// Whether an exceedance `y` lies in the closed-below, open-above support.
    pub fn in_support(&self, y: T) -> bool {
        y >= T::zero() && y < self.upper_endpoint()
    }

    /// `-ln(1 - F(y))` for an in-support exceedance.
    #[inline]
    fn cumulative_hazard(&self, y: T) -> T {
        let w = y / self.scale;
        if self.is_exponential() {
            w
        } else {
            w * log1p_over(self.shape * w)
        }
    }

    /// CDF of the exceedance `y`.
    pub fn cdf(&self, y: T) -> Result<T> {
        if y.is_nan() {
            return Err(domain("NaN argument to gpd cdf"));
        }
        if !self.in_support(y) {
            return Err(domain(format!("{y} outside GPD support")));
        }
        Ok(-(-self.cumulative_hazard(y)).exp_m1())
    }

    /// CDF that saturates to 0 below and 1 above the support instead of failing.
    pub fn cdf_saturating(&self, y: T) -> T {
        if y <= T::zero() {
            T::zero()
        } else if y >= self.upper_endpoint() {
            T::one()
        } else {
            -(-self.cumulative_hazard(y)).exp_m1()
        }
    }

    /// `ln(1 - F(y))`, `-∞` at or beyond a finite upper endpoint.
    pub fn log_survival(&self, y: T) -> T {
        if y <= T::zero() {
            T::zero()
        } else if y >= self.upper_endpoint() {
            T::neg_infinity()
        } else {
            -self.cumulative_hazard(y)
        }
    }

    /// Inverse CDF on the exceedance scale.
    pub fn quantile(&self, p: T) -> Result<T> {
        if p.is_nan() || p < T::zero() || p > T::one() {
            return Err(domain(format!("probability {p} outside [0, 1)")));
        }
        if p == T::one() {
            if self.shape >= T::zero() || self.is_exponential() {
                return Err(Error::Infinite("p = 1 with unbounded support".into()));
            }
            return Ok(self.upper_endpoint());
        }
        // -ln(1 - p) is the cumulative hazard at the quantile.
        let h = -(-p).ln_1p();
        if self.is_exponential() {
            Ok(self.scale * h)
        } else {
            Ok(self.scale * h * expm1_over(self.shape * h))
        }
    }

    /// Log density of the exceedance `y`; `-∞` outside the support.
    pub fn logpdf(&self, y: T) -> T {
        if y.is_nan() || !self.in_support(y) {
            return T::neg_infinity();
        }
        let w = y / self.scale;
        if self.is_exponential() {
            -self.scale.ln() - w
        } else {
            -self.scale.ln() - (T::one() + self.shape) * w * log1p_over(self.shape * w)
        }
    }

    /// Parameters of the exceedances over a higher threshold `v`, using
    /// `σ_v = σ_u + ξ (v - u)` with the shape unchanged.
    pub fn shift_scale(&self, v: T) -> Result<Self> {
        if v < self.threshold {
            return Err(domain(format!("new threshold {v} below current {}", self.threshold)));
        }
        let scale = self.scale + self.shape * (v - self.threshold);
        if !(scale > T::zero()) {
            return Err(domain(format!("threshold {v} at or beyond the upper endpoint")));
        }
        Ok(Self { scale, shape: self.shape, threshold: v })
    }

    /// Draws one exceedance by inversion of a uniform from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        self.quantile(T::lit(u)).expect("uniform draw lies in [0, 1)")
    }

    /// Fills `out` with exceedances drawn by inversion.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        for slot in out {
            *slot = self.draw(rng);
        }
    }
}

/// `n` exceedances drawn by inversion from a ChaCha8 stream seeded with `seed`.
///
/// Each draw consumes one `f64` uniform in `[0, 1)` (53 random bits from one
/// `u64`), so the sequence is fixed across platforms for a given seed.
pub fn sample<T: Scalar>(n: usize, params: &GpdParams<T>, seed: u64) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut out = vec![T::zero(); n];
    params.fill(&mut rng, &mut out);
    Ok(out)
}
