//! Return levels of a fitted threshold model and their confidence intervals.
//!
//! With threshold `u`, exceedance rate `ζ_u` and `n_y` observations per
//! year, the level exceeded once every `N` years on average is
//!
//! ```text
//! z_N = u + σ/ξ [(N n_y ζ_u)^ξ - 1]       (u + σ ln(N n_y ζ_u) at ξ = 0)
//! ```
//!
//! Delta-method intervals include the binomial variance of `ζ̂_u`; profile
//! likelihood intervals hold `ζ_u` fixed.

use crate::error::{domain, Error, Result};
use crate::estimation::{fit_mle, FitResult, REGULAR_SHAPE_BOUND, SHAPE_FLOOR};
use crate::gpd::GpdParams;
use crate::scalar::{expm1_over, log1p_over, Scalar};
use crate::special::{chi2_1_quantile, normal_quantile};
use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_PERIODS: [f64; 4] = [50.0, 100.0, 250.0, 500.0];
pub const DEFAULT_LEVEL: f64 = 0.95;

const EXPANSION: f64 = 1.6;
const MAX_EXPANSIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    Delta,
    Profile,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Delta => "delta",
            CiMethod::Profile => "profile",
        })
    }
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "delta" => Ok(CiMethod::Delta),
            "profile" => Ok(CiMethod::Profile),
            other => Err(Error::Config(format!("unknown interval method '{other}'"))),
        }
    }
}

/// Estimated exceedance probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub zeta: f64,
    pub se: f64,
}

pub fn rate_estimate(total_n: usize, exceed_n: usize) -> Result<Rate> {
    if exceed_n == 0 || exceed_n > total_n {
        return Err(domain(format!("need 0 < exceedances ≤ total, got {exceed_n} of {total_n}")));
    }
    let zeta = exceed_n as f64 / total_n as f64;
    Ok(Rate { zeta, se: (zeta * (1.0 - zeta) / total_n as f64).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnLevelEstimate {
    pub period: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: CiMethod,
    pub level: f64,
    pub rate: f64,
    pub n_y: f64,
    /// An interval end could not be bracketed and was left at the edge of
    /// the parameter space (`u` below, `+∞` above).
    pub open: bool,
}

/// `ln(N n_y ζ)`, which must be positive.
fn log_events<T: Scalar>(zeta: T, n_y: T, period: T) -> Result<T> {
    if !(zeta > T::zero() && zeta <= T::one()) {
        return Err(domain(format!("rate {zeta} outside (0, 1]")));
    }
    if !(period >= T::one()) || !(n_y > T::zero()) {
        return Err(domain("period must be at least 1 and n_y positive"));
    }
    let m = period * n_y * zeta;
    if !(m > T::one()) {
        return Err(domain(format!("N·n_y·ζ = {m} must exceed 1")));
    }
    Ok(m.ln())
}

/// `z_N` for the model `params`, whose `threshold` is `u`.
pub fn return_level<T: Scalar>(params: &GpdParams<T>, zeta: T, n_y: T, period: T) -> Result<T> {
    let l = log_events(zeta, n_y, period)?;
    Ok(params.threshold + params.scale * l * growth(params.shape, l))
}

/// `((e^{ξL}) - 1)/(ξL)`, continuous at `ξ = 0`.
fn growth<T: Scalar>(xi: T, l: T) -> T {
    if xi.abs() < T::shape_zero_tol() {
        T::one()
    } else {
        expm1_over(xi * l)
    }
}

/// Derivative of `(e^x - 1)/x`.
fn growth_derivative(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    }
}

/// Gradient of `z_N` with respect to `(σ, ξ, ζ)`.
pub fn return_level_gradient(params: &GpdParams<f64>, zeta: f64, n_y: f64, period: f64) -> Result<[f64; 3]> {
    let l = log_events(zeta, n_y, period)?;
    let (sigma, xi) = (params.scale, params.shape);
    Ok([l * growth(xi, l), sigma * l * l * growth_derivative(xi * l), sigma * (xi * l).exp() / zeta])
}

/// Symmetric normal interval from the covariance of the fit and the
/// binomial variance of the rate, taken as independent.
pub fn delta_ci(fit: &FitResult, rate: &Rate, n_y: f64, period: f64, level: f64) -> Result<ReturnLevelEstimate> {
    check_level(level)?;
    let cov = fit.covariance.ok_or_else(|| Error::Unavailable("fit has no covariance".into()))?;
    let z = return_level(&fit.params, rate.zeta, n_y, period)?;
    let g = return_level_gradient(&fit.params, rate.zeta, n_y, period)?;
    let var = g[0] * g[0] * cov[0][0]
        + 2.0 * g[0] * g[1] * cov[0][1]
        + g[1] * g[1] * cov[1][1]
        + g[2] * g[2] * rate.se * rate.se;
    let half = normal_quantile(0.5 + level / 2.0) * var.max(0.0).sqrt();
    Ok(ReturnLevelEstimate {
        period,
        estimate: z,
        ci_low: z - half,
        ci_high: z + half,
        method: CiMethod::Delta,
        level,
        rate: rate.zeta,
        n_y,
        open: false,
    })
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("confidence level {level} outside (0, 1)")))
    }
}

/// Negative log-likelihood with the scale tied to a return level.
struct Profile<'a> {
    data: &'a [f64],
    max: f64,
    l: f64,
    /// Shape maximizing the last evaluation; warm start for the next.
    last_xi: Cell<f64>,
}

impl Profile<'_> {
    fn nll(&self, sigma: f64, xi: f64) -> f64 {
        if !(sigma > 0.0 && xi > SHAPE_FLOOR && 1.0 + xi * self.max / sigma > 0.0) {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for &y in self.data {
            let w = y / sigma;
            let t = xi * w;
            acc += t.ln_1p() + w * log1p_over(t);
        }
        self.data.len() as f64 * sigma.ln() + acc
    }

    /// Scale placing the return level `d` above the threshold.
    fn sigma_for(&self, d: f64, xi: f64) -> f64 {
        d / (self.l * growth(xi, self.l))
    }

    /// Profile negative log-likelihood at excess return level `d`.
    fn at(&self, d: f64) -> f64 {
        let f = |xi: f64| self.nll(self.sigma_for(d, xi), xi);
        let (xi, v) = minimize_scalar(f, self.last_xi.get(), 0.05);
        if v.is_finite() {
            self.last_xi.set(xi);
        }
        v
    }
}

/// Local minimum of `f` near `x0`: downhill bracketing then Brent's method.
fn minimize_scalar(f: impl Fn(f64) -> f64, x0: f64, step: f64) -> (f64, f64) {
    let mut a = x0;
    let mut fa = f(a);
    if !fa.is_finite() {
        // search outward for a feasible start
        let found = (1..=40)
            .flat_map(|k| {
                let s = step * k as f64;
                [x0 + s, x0 - s]
            })
            .map(|x| (x, f(x)))
            .find(|(_, v)| v.is_finite());
        match found {
            Some((x, v)) => (a, fa) = (x, v),
            None => return (x0, f64::INFINITY),
        }
    }
    let mut h = step;
    let mut b = a + h;
    let mut fb = f(b);
    if !(fb < fa) {
        h = -h;
        b = a + h;
        fb = f(b);
        if !(fb < fa) {
            return brent(&f, a - step.abs(), a + step.abs(), a, fa);
        }
    }
    for _ in 0..MAX_EXPANSIONS {
        h *= EXPANSION;
        let c = b + h;
        let fc = f(c);
        if !(fc < fb) {
            let (lo, hi) = if a < c { (a, c) } else { (c, a) };
            return brent(&f, lo, hi, b, fb);
        }
        (a, b, fb) = (b, c, fc);
    }
    (b, fb)
}

/// Brent's minimizer on `[lo, hi]` given an interior point `x` with value `fx`.
fn brent(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, x: f64, fx: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut x, mut fx) = (x, fx);
    let (mut w, mut fw, mut v, mut fv) = (x, fx, x, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let tol = 1e-10 * x.abs() + 1e-12;
        if (x - mid).abs() <= 2.0 * tol - 0.5 * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < 2.0 * tol || hi - u < 2.0 * tol {
                    d = if x < mid { tol } else { -tol };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < mid { hi - x } else { lo - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol { x + d } else { x + tol.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

/// Profile likelihood interval for `z_N` from exceedances over `u`.
///
/// The deviance `2[ℓ(θ̂) - ℓ_p(z)]` is compared with the chi-square(1)
/// quantile; each end is bracketed by geometric steps in `ln(z - u)` and
/// located by bisection.
pub fn profile_ci(
    exceedances: &[f64],
    u: f64,
    zeta: f64,
    n_y: f64,
    period: f64,
    level: f64,
) -> Result<ReturnLevelEstimate> {
    check_level(level)?;
    let l = log_events(zeta, n_y, period)?;
    let mut fit = fit_mle(exceedances)?;
    if !fit.converged {
        return Err(Error::Unavailable("maximum likelihood fit did not converge".into()));
    }
    if fit.params.shape <= REGULAR_SHAPE_BOUND {
        return Err(Error::Unavailable(format!("shape estimate {} too small for profiling", fit.params.shape)));
    }
    fit.params.threshold = u;
    profile_from_fit(exceedances, &fit, l, zeta, n_y, period, level)
}

pub(crate) fn profile_from_fit(
    exceedances: &[f64],
    fit: &FitResult,
    l: f64,
    zeta: f64,
    n_y: f64,
    period: f64,
    level: f64,
) -> Result<ReturnLevelEstimate> {
    let u = fit.params.threshold;
    let d_hat = fit.params.scale * l * growth(fit.params.shape, l);
    let profile = Profile {
        data: exceedances,
        max: exceedances.iter().copied().fold(0.0, f64::max),
        l,
        last_xi: Cell::new(fit.params.shape),
    };
    let best = profile.at(d_hat).min(fit.objective_value);
    let crit = chi2_1_quantile(level);
    let deviance = |t: f64| {
        let v = profile.at(t.exp());
        if v.is_finite() {
            2.0 * (v - best)
        } else {
            f64::INFINITY
        }
    };

    let t_hat = d_hat.ln();
    let start = fit
        .covariance
        .map(|c| {
            let g =
                [l * growth(fit.params.shape, l), fit.params.scale * l * l * growth_derivative(fit.params.shape * l)];
            let var = g[0] * g[0] * c[0][0] + 2.0 * g[0] * g[1] * c[0][1] + g[1] * g[1] * c[1][1];
            (var.max(0.0).sqrt() / d_hat).clamp(1e-3, 1.0)
        })
        .unwrap_or(0.1);
    let mut open = false;
    let mut end = |sign: f64| -> f64 {
        profile.last_xi.set(fit.params.shape);
        let mut inside = t_hat;
        let mut delta = start;
        for _ in 0..MAX_EXPANSIONS {
            let t = t_hat + sign * delta;
            if !t.is_finite() || t.exp() == 0.0 || !t.exp().is_finite() {
                break;
            }
            if deviance(t) > crit {
                let (mut a, mut b) = (inside, t);
                while (b.exp() - a.exp()).abs() > 1e-8 * (1.0 + u.abs() + a.exp()) {
                    let m = 0.5 * (a + b);
                    if deviance(m) > crit {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                return 0.5 * (a + b);
            }
            inside = t;
            delta *= EXPANSION;
        }
        open = true;
        if sign > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    };
    let hi = end(1.0);
    let lo = end(-1.0);
    let estimate = u + d_hat;
    Ok(ReturnLevelEstimate {
        period,
        estimate,
        ci_low: (u + lo.exp()).min(estimate),
        ci_high: (u + hi.exp()).max(estimate),
        method: CiMethod::Profile,
        level,
        rate: zeta,
        n_y,
        open,
    })
}

/// Profile deviance `2[ℓ(θ̂) - ℓ_p(z)]` at return level `z`.
pub fn profile_deviance(exceedances: &[f64], fit: &FitResult, z: f64, zeta: f64, n_y: f64, period: f64) -> Result<f64> {
    let l = log_events(zeta, n_y, period)?;
    let d = z - fit.params.threshold;
    if !(d > 0.0) {
        return Err(domain("return level must exceed the threshold"));
    }
    let profile = Profile {
        data: exceedances,
        max: exceedances.iter().copied().fold(0.0, f64::max),
        l,
        last_xi: Cell::new(fit.params.shape),
    };
    Ok(2.0 * (profile.at(d) - fit.objective_value))
}

/// Return levels for several periods with the chosen interval method.
///
/// `fit` must be a maximum likelihood fit to `exceedances` with
/// `params.threshold` set to the threshold.
pub fn return_levels(
    exceedances: &[f64],
    fit: &FitResult,
    rate: &Rate,
    n_y: f64,
    periods: &[f64],
    method: CiMethod,
    level: f64,
) -> Vec<Result<ReturnLevelEstimate>> {
    periods
        .iter()
        .map(|&period| match method {
            CiMethod::Delta => delta_ci(fit, rate, n_y, period, level),
            CiMethod::Profile => {
                check_level(level)?;
                if !fit.converged || fit.params.shape <= REGULAR_SHAPE_BOUND {
                    return Err(Error::Unavailable("fit unsuitable for profiling".into()));
                }
                let l = log_events(rate.zeta, n_y, period)?;
                profile_from_fit(exceedances, fit, l, rate.zeta, n_y, period, level)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpd::sample;
    use approx::assert_relative_eq;

    fn at(u: f64, sigma: f64, xi: f64) -> GpdParams<f64> {
        GpdParams::with_threshold(sigma, xi, u).unwrap()
    }

    #[test]
    fn return_level_examples() {
        let e = std::f64::consts::E;
        assert_relative_eq!(return_level(&at(5.0, 2.0, 0.0), 1.0, 1.0, e).unwrap(), 7.0, epsilon = 1e-14);
        let z = return_level(&at(5.0, 2.0, 0.25), 0.05, 365.0, 50.0).unwrap();
        assert_relative_eq!(z, 5.0 + 8.0 * (912.5f64.powf(0.25) - 1.0), epsilon = 1e-12);
        assert_relative_eq!(z, 40.969_163_692_014_11, epsilon = 1e-9);
        let a = return_level(&at(5.0, 2.0, 1e-9), 0.05, 365.0, 50.0).unwrap();
        let b = return_level(&at(5.0, 2.0, 0.0), 0.05, 365.0, 50.0).unwrap();
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn return_level_requires_more_than_one_event() {
        assert!(return_level(&at(0.0, 1.0, 0.1), 0.001, 100.0, 1.0).is_err());
        assert!(return_level(&at(0.0, 1.0, 0.1), 0.0, 100.0, 50.0).is_err());
    }

    #[test]
    fn continuity_in_shape() {
        let base = return_level(&at(1.0, 1.5, 0.0), 0.1, 365.0, 100.0).unwrap();
        for k in 3..15 {
            let xi = 10f64.powi(-k);
            for s in [xi, -xi] {
                let z = return_level(&at(1.0, 1.5, s), 0.1, 365.0, 100.0).unwrap();
                assert!((z - base).abs() < 20.0 * xi * base, "{s}: {z} vs {base}");
            }
        }
    }

    #[test]
    fn increasing_in_period() {
        let p = at(0.0, 1.0, -0.3);
        let zs: Vec<f64> =
            [2.0, 10.0, 50.0, 500.0].iter().map(|&n| return_level(&p, 0.05, 365.0, n).unwrap()).collect();
        assert!(zs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rate_examples() {
        let r = rate_estimate(1000, 100).unwrap();
        assert_eq!(r.zeta, 0.1);
        assert_relative_eq!(r.se, 0.009_486_832_980_505_138, epsilon = 1e-15);
        assert_eq!(rate_estimate(1000, 1000).unwrap(), Rate { zeta: 1.0, se: 0.0 });
        assert!(rate_estimate(1000, 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for &(s, x, z) in &[(2.0, 0.25, 0.05), (1.0, -0.3, 0.2), (0.7, 1e-8, 0.01), (3.0, 0.8, 0.5)] {
            let f = |s: f64, x: f64, z: f64| return_level(&at(2.0, s, x), z, 365.0, 100.0).unwrap();
            let g = return_level_gradient(&at(2.0, s, x), z, 365.0, 100.0).unwrap();
            let h = 1e-6;
            let fd = [
                (f(s + h, x, z) - f(s - h, x, z)) / (2.0 * h),
                (f(s, x + h, z) - f(s, x - h, z)) / (2.0 * h),
                (f(s, x, z + h * z) - f(s, x, z - h * z)) / (2.0 * h * z),
            ];
            for k in 0..3 {
                assert_relative_eq!(g[k], fd[k], max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn growth_derivative_is_continuous() {
        for x in [-2e-3, -1e-3, -9.99e-4, 9.99e-4, 1e-3, 2e-3] {
            let h = 1e-6;
            let fd = (expm1_over(x + h) - expm1_over(x - h)) / (2.0 * h);
            assert_relative_eq!(growth_derivative(x), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn profile_interval_properties() {
        let data = sample(2000, &GpdParams::new(2.0, 0.25).unwrap(), 77).unwrap();
        let zeta = 0.05;
        let r = profile_ci(&data, 10.0, zeta, 365.0, 100.0, 0.95).unwrap();
        assert!(!r.open);
        assert!(r.ci_low < r.estimate && r.estimate < r.ci_high);
        assert!(r.ci_high - r.estimate > r.estimate - r.ci_low);
        let mut fit = fit_mle(&data).unwrap();
        fit.params.threshold = 10.0;
        let crit = chi2_1_quantile(0.95);
        assert!(profile_deviance(&data, &fit, r.estimate, zeta, 365.0, 100.0).unwrap().abs() < 1e-8);
        for end in [r.ci_low, r.ci_high] {
            let d = profile_deviance(&data, &fit, end, zeta, 365.0, 100.0).unwrap();
            assert!((d - crit).abs() < 1e-4, "{d}");
        }
        let delta = delta_ci(&fit, &Rate { zeta, se: 0.0 }, 365.0, 100.0, 0.95).unwrap();
        assert_relative_eq!(delta.estimate, r.estimate, max_relative = 1e-12);
        assert!(r.ci_low <= delta.estimate && delta.estimate <= r.ci_high);
    }

    #[test]
    fn delta_interval_contains_estimate() {
        let data = sample(500, &GpdParams::new(1.0, 0.1).unwrap(), 5).unwrap();
        let mut fit = fit_mle(&data).unwrap();
        fit.params.threshold = 3.0;
        let rate = rate_estimate(10_000, 500).unwrap();
        let r = delta_ci(&fit, &rate, 365.0, 50.0, 0.95).unwrap();
        assert!(r.ci_low <= r.estimate && r.estimate <= r.ci_high);
        let mut bare = fit.clone();
        bare.covariance = None;
        assert!(matches!(delta_ci(&bare, &rate, 365.0, 50.0, 0.95), Err(Error::Unavailable(_))));
    }

    #[test]
    fn shift_consistency_with_exact_rate() {
        let base = at(2.0, 1.5, 0.2);
        let zeta_u = 0.08;
        let v = 4.5;
        let shifted = base.shift_scale(v).unwrap();
        let zeta_v = zeta_u * (1.0 - GpdParams::new(1.5, 0.2).unwrap().cdf(v - 2.0).unwrap());
        for n in [50.0, 100.0, 500.0] {
            let a = return_level(&base, zeta_u, 365.0, n).unwrap();
            let b = return_level(&shifted, zeta_v, 365.0, n).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
    }
}
