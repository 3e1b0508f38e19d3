//! GPD parameter estimation by maximum likelihood and by maximum product of
//! spacings.
//!
//! Both fits optimize over `(ln σ, ξ)`. A damped Newton iteration is run
//! from the better of two starting points (the exponential fit `ξ = 0,
//! σ = mean` and the probability-weighted-moments estimate); if it fails to
//! reach a stationary point, a Nelder–Mead search is run from both starts
//! and the best result is polished with Newton again.
//!
//! A fit is reported as not converged when the final gradient is not small,
//! the objective is not finite, or the shape estimate is at or below
//! `-1 + 1e-8`, where the GPD likelihood becomes unbounded.

use crate::error::{domain, Error, Result};
use crate::gpd::GpdParams;
use crate::optim::{self, invert_spd, Mat2, Objective, Outcome, Vec2};
use crate::scalar::log1p_over;

/// Shape estimates at or below this bound are treated as failed fits.
pub const SHAPE_FLOOR: f64 = -1.0 + 1e-8;

/// Below this shape estimate the asymptotic covariance is not reported.
pub const REGULAR_SHAPE_BOUND: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Mle,
    Mps,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: GpdParams<f64>,
    pub method: FitMethod,
    /// Negative log-likelihood for MLE, Moran's objective for MPS.
    pub objective_value: f64,
    pub converged: bool,
    pub n: usize,
    /// Asymptotic covariance of `(σ̂, ξ̂)`.
    pub covariance: Option<[[f64; 2]; 2]>,
    pub iterations: usize,
    /// Gradient of the objective in `(ln σ, ξ)` at the returned point.
    pub gradient: [f64; 2],
}

impl FitResult {
    pub fn se_scale(&self) -> Option<f64> {
        self.covariance.map(|c| c[0][0].sqrt())
    }

    pub fn se_shape(&self) -> Option<f64> {
        self.covariance.map(|c| c[1][1].sqrt())
    }
}

fn validate(data: &[f64]) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: data.len() });
    }
    if let Some(bad) = data.iter().find(|y| !(y.is_finite() && **y >= 0.0)) {
        return Err(domain(format!("exceedances must be finite and non-negative, got {bad}")));
    }
    Ok(())
}

/// Series/closed form of `(1/(1+x) - ln(1+x)/x) / x`.
#[inline]
fn shape_score_kernel(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // Σ (-1)^(m+1) (m+1)/(m+2) x^m
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 0..10 {
            let c = (m + 1) as f64 / (m + 2) as f64;
            acc += if m % 2 == 0 { -c * pow } else { c * pow };
            pow *= x;
        }
        acc
    } else {
        (1.0 / (1.0 + x) - x.ln_1p() / x) / x
    }
}

/// Series/closed form of `2 ln(1+x)/x³ - 2/(x²(1+x)) - 1/(x(1+x)²)`.
#[inline]
fn shape_curvature_kernel(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // Σ (-1)^m (m + 2/(m+3)) x^m
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 0..10 {
            let c = m as f64 + 2.0 / (m + 3) as f64;
            acc += if m % 2 == 0 { c * pow } else { -c * pow };
            pow *= x;
        }
        acc
    } else {
        let z = 1.0 + x;
        2.0 * x.ln_1p() / (x * x * x) - 2.0 / (x * x * z) - 1.0 / (x * z * z)
    }
}

/// Negative log-likelihood in `(ln σ, ξ)` with analytic derivatives.
struct Nll<'a> {
    data: &'a [f64],
    max: f64,
}

impl<'a> Nll<'a> {
    fn new(data: &'a [f64]) -> Self {
        Self { data, max: data.iter().copied().fold(0.0, f64::max) }
    }

    #[inline]
    fn feasible(&self, sigma: f64, xi: f64) -> bool {
        sigma > 0.0 && sigma.is_finite() && xi.is_finite() && 1.0 + xi * self.max / sigma > 0.0
    }

    /// `(g_σ, g_ξ)` and the Hessian in `(σ, ξ)`.
    fn derivatives(&self, sigma: f64, xi: f64) -> Option<(Vec2, Mat2)> {
        if !self.feasible(sigma, xi) {
            return None;
        }
        let n = self.data.len() as f64;
        let (mut a, mut b, mut d, mut r_sum, mut q_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &y in self.data {
            let w = y / sigma;
            let x = xi * w;
            let z = 1.0 + x;
            let wz = w / z;
            a += wz;
            d += wz / z;
            b += wz * wz;
            r_sum += w * w * shape_score_kernel(x);
            q_sum += w * w * w * shape_curvature_kernel(x);
        }
        let g = [n / sigma - (xi + 1.0) * a / sigma, r_sum + a];
        let h_ss = (-n + (xi + 1.0) * (a + d)) / (sigma * sigma);
        let h_sx = (-a + (xi + 1.0) * b) / sigma;
        let h_xx = q_sum - b;
        Some((g, [[h_ss, h_sx], [h_sx, h_xx]]))
    }
}

impl Objective for Nll<'_> {
    fn value(&self, x: Vec2) -> f64 {
        let sigma = x[0].exp();
        if !self.feasible(sigma, x[1]) {
            return f64::INFINITY;
        }
        let n = self.data.len() as f64;
        let mut acc = 0.0;
        for &y in self.data {
            let w = y / sigma;
            let t = x[1] * w;
            acc += t.ln_1p() + w * log1p_over(t);
        }
        n * x[0] + acc
    }

    fn gradient(&self, x: Vec2) -> Option<Vec2> {
        let sigma = x[0].exp();
        let (g, _) = self.derivatives(sigma, x[1])?;
        Some([sigma * g[0], g[1]])
    }

    fn hessian(&self, x: Vec2) -> Option<Mat2> {
        let sigma = x[0].exp();
        let (g, h) = self.derivatives(sigma, x[1])?;
        let h_ss = sigma * sigma * h[0][0] + sigma * g[0];
        let h_sx = sigma * h[0][1];
        Some([[h_ss, h_sx], [h_sx, h[1][1]]])
    }
}

/// Sum of `-ln f(y)` over the data; `+∞` if any point is outside the support.
pub fn neg_log_likelihood(params: &GpdParams<f64>, exceedances: &[f64]) -> f64 {
    exceedances.iter().map(|&y| -params.logpdf(y)).sum()
}

/// Gradient of [`neg_log_likelihood`] with respect to `(σ, ξ)`.
pub fn neg_log_likelihood_gradient(params: &GpdParams<f64>, exceedances: &[f64]) -> Option<[f64; 2]> {
    Nll::new(exceedances).derivatives(params.scale, params.shape).map(|(g, _)| g)
}

/// Observed information (Hessian of the negative log-likelihood) in `(σ, ξ)`.
pub fn observed_information(params: &GpdParams<f64>, exceedances: &[f64]) -> Option<[[f64; 2]; 2]> {
    Nll::new(exceedances).derivatives(params.scale, params.shape).map(|(_, h)| h)
}

/// Moran's objective `M(θ) = -Σ ln D_i` over sorted data, with the
/// zero-spacing rule for ties: a spacing between equal observations is
/// replaced by the log density at that observation.
struct Moran<'a> {
    sorted: &'a [f64],
}

impl Moran<'_> {
    fn feasible(&self, sigma: f64, xi: f64) -> bool {
        let max = *self.sorted.last().unwrap_or(&0.0);
        sigma > 0.0 && sigma.is_finite() && xi.is_finite() && 1.0 + xi * max / sigma > 0.0
    }

    /// Per-observation `ln S`, `d ln S / d ln σ`, `d ln S / dξ`.
    fn survival_terms(&self, sigma: f64, xi: f64) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.sorted.iter().map(move |&y| {
            let w = y / sigma;
            let x = xi * w;
            let z = 1.0 + x;
            (-w * log1p_over(x), w / z, -w * w * shape_score_kernel(x))
        })
    }
}

impl Objective for Moran<'_> {
    fn value(&self, x: Vec2) -> f64 {
        let (sigma, xi) = (x[0].exp(), x[1]);
        if !self.feasible(sigma, xi) {
            return f64::INFINITY;
        }
        let params = GpdParams { scale: sigma, shape: xi, threshold: 0.0 };
        let mut total = 0.0;
        let mut prev_ln_s = 0.0;
        let mut prev_y = f64::NAN;
        for (&y, (ln_s, _, _)) in self.sorted.iter().zip(self.survival_terms(sigma, xi)) {
            let ln_d = if y == prev_y { params.logpdf(y) } else { prev_ln_s + (-(ln_s - prev_ln_s).exp_m1()).ln() };
            total -= ln_d;
            prev_ln_s = ln_s;
            prev_y = y;
        }
        total - prev_ln_s
    }

    fn gradient(&self, x: Vec2) -> Option<Vec2> {
        let (sigma, xi) = (x[0].exp(), x[1]);
        if !self.feasible(sigma, xi) {
            return None;
        }
        let mut g = [0.0, 0.0];
        let (mut prev_ln_s, mut prev_ds, mut prev_dx) = (0.0, 0.0, 0.0);
        let mut prev_y = f64::NAN;
        for (&y, (ln_s, ds, dx)) in self.sorted.iter().zip(self.survival_terms(sigma, xi)) {
            if y == prev_y {
                // d ln f in (ln σ, ξ)
                let w = y / sigma;
                let t = xi * w;
                g[0] -= -1.0 + (xi + 1.0) * w / (1.0 + t);
                g[1] -= -(w * w * shape_score_kernel(t) + w / (1.0 + t));
            } else {
                let rho = (ln_s - prev_ln_s).exp();
                let denom = -(ln_s - prev_ln_s).exp_m1();
                if !(denom > 0.0) {
                    return None;
                }
                g[0] -= (prev_ds - rho * ds) / denom;
                g[1] -= (prev_dx - rho * dx) / denom;
            }
            prev_ln_s = ln_s;
            prev_ds = ds;
            prev_dx = dx;
            prev_y = y;
        }
        g[0] -= prev_ds;
        g[1] -= prev_dx;
        Some(g)
    }
}

/// Moran's objective for given parameters; `+∞` when infeasible.
pub fn moran_objective(params: &GpdParams<f64>, exceedances: &[f64]) -> f64 {
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    Moran { sorted: &sorted }.value([params.scale.ln(), params.shape])
}

/// Probability-weighted-moments estimate `(σ, ξ)`.
pub(crate) fn pwm_estimate(sorted: &[f64]) -> Option<(f64, f64)> {
    let n = sorted.len() as f64;
    let a0 = sorted.iter().sum::<f64>() / n;
    let a1 = sorted.iter().enumerate().map(|(i, &y)| (1.0 - (i as f64 + 1.0 - 0.35) / n) * y).sum::<f64>() / n;
    let denom = a0 - 2.0 * a1;
    if !(denom.abs() > 0.0) {
        return None;
    }
    let xi = 2.0 - a0 / denom;
    let sigma = 2.0 * a0 * a1 / denom;
    (sigma > 0.0 && xi.is_finite()).then_some((sigma, xi))
}

fn starts(sorted: &[f64]) -> Vec<Vec2> {
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let max = *sorted.last().unwrap();
    let mut out = vec![[mean.ln(), 0.0]];
    if let Some((sigma, xi)) = pwm_estimate(sorted) {
        let xi = xi.clamp(-0.9, 2.0);
        // pull σ inside the support constraint σ > -ξ·max
        let sigma = if xi < 0.0 { sigma.max(-xi * max * 1.05) } else { sigma };
        out.push([sigma.ln(), xi]);
    }
    out
}

fn minimize<O: Objective>(obj: &O, starts: &[Vec2]) -> Outcome {
    let mut ranked: Vec<(Vec2, f64)> = starts.iter().map(|&s| (s, obj.value(s))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let first = optim::newton(obj, ranked[0].0);
    if first.converged && first.x[1] > SHAPE_FLOOR {
        return first;
    }
    let mut best = first;
    for &(s, _) in &ranked {
        let simplex = optim::nelder_mead(obj, s, [0.1, 0.1]);
        let polished = optim::newton(obj, simplex.x);
        let candidate = if polished.value <= simplex.value { polished } else { simplex };
        let better = match (candidate.converged, best.converged) {
            (true, false) => true,
            (false, true) => false,
            _ => candidate.value < best.value,
        };
        if better {
            best = Outcome { iterations: best.iterations + candidate.iterations, ..candidate };
        }
    }
    best
}

fn assemble(out: Outcome, method: FitMethod, data: &[f64], fallback: Vec2) -> FitResult {
    let x = if out.value.is_finite() { out.x } else { fallback };
    let params = GpdParams { scale: x[0].exp(), shape: x[1], threshold: 0.0 };
    let converged = out.converged && out.value.is_finite() && params.shape > SHAPE_FLOOR;
    let covariance = if converged && params.shape > REGULAR_SHAPE_BOUND {
        observed_information(&params, data).and_then(invert_spd)
    } else {
        None
    };
    FitResult {
        params,
        method,
        objective_value: out.value,
        converged,
        n: data.len(),
        covariance,
        iterations: out.iterations,
        gradient: out.gradient,
    }
}

fn degenerate(sorted: &[f64]) -> bool {
    sorted.first() == sorted.last()
}

fn unconverged(method: FitMethod, sorted: &[f64], start: Vec2, value: f64) -> FitResult {
    FitResult {
        params: GpdParams { scale: start[0].exp().max(f64::MIN_POSITIVE), shape: start[1], threshold: 0.0 },
        method,
        objective_value: value,
        converged: false,
        n: sorted.len(),
        covariance: None,
        iterations: 0,
        gradient: [f64::NAN; 2],
    }
}

/// Maximum likelihood fit to threshold exceedances.
pub fn fit_mle(exceedances: &[f64]) -> Result<FitResult> {
    validate(exceedances)?;
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let starts = starts(&sorted);
    let obj = Nll::new(&sorted);
    if degenerate(&sorted) {
        return Ok(unconverged(FitMethod::Mle, &sorted, starts[0], obj.value(starts[0])));
    }
    let out = minimize(&obj, &starts);
    Ok(assemble(out, FitMethod::Mle, &sorted, starts[0]))
}

/// Maximum product of spacings fit; `objective_value` is Moran's statistic.
pub fn fit_mps(exceedances: &[f64]) -> Result<FitResult> {
    validate(exceedances)?;
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let starts = starts(&sorted);
    let obj = Moran { sorted: &sorted };
    if degenerate(&sorted) {
        return Ok(unconverged(FitMethod::Mps, &sorted, starts[0], obj.value(starts[0])));
    }
    let out = minimize(&obj, &starts);
    Ok(assemble(out, FitMethod::Mps, &sorted, starts[0]))
}
