//! Score test of a constant shape against a piecewise-constant shape.
//!
//! With thresholds `0 = u_0 < u_1 < … < u_k` on the exceedance scale the
//! alternative gives interval `i` (`u_i < y ≤ u_{i+1}`, the last one
//! unbounded) its own shape `ξ_i`. The scale in interval `i` follows from
//! threshold stability, `σ_i = σ_{i-1} + ξ_{i-1}(u_i - u_{i-1})`, which keeps
//! the density continuous. An observation in interval `i` contributes
//!
//! ```text
//! ln f(y - u_i; σ_i, ξ_i) + Σ_{j<i} ln S(u_{j+1} - u_j; σ_j, ξ_j)
//! ```
//!
//! The score of the `k + 2` parameters `(σ_0, ξ_0, …, ξ_k)` is evaluated
//! analytically at the ordinary GPD fit. The Fisher information is the
//! expected outer product of the per-observation score under that fit,
//! integrated by Gauss–Legendre quadrature on the probability scale. It is
//! finite only for `ξ > -1/2`. `S = Uᵀ I⁻¹ U` is referred to chi-square with
//! `k` degrees of freedom.

use super::{PValuePath, TestKind, TestResult};
use crate::error::{domain, Error, Result};
use crate::estimation::fit_mle;
use crate::gpd::GpdParams;
use crate::null_dist::type7_quantile;
use crate::special::chi2_sf;
use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};

/// Internal thresholds at the deciles.
pub const DEFAULT_SCORE_INTERVALS: usize = 9;

/// Minimum number of observations per interval.
const MIN_PER_INTERVAL: usize = 5;

/// Type-7 quantiles at `j/(k+1)`, `j = 1..=k`.
pub fn decile_thresholds(exceedances: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=k).map(|j| type7_quantile(&sorted, j as f64 / (k + 1) as f64)).collect()
}

/// Index of the interval holding `y`, given internal thresholds `u_1..u_k`.
fn interval_of(y: f64, thresholds: &[f64]) -> usize {
    thresholds.partition_point(|&u| u < y)
}

/// Log-likelihood of the piecewise-shape model. `theta` is
/// `(σ_0, ξ_0, …, ξ_k)` and `thresholds` holds `u_1 < … < u_k`.
/// Returns `-∞` for infeasible parameters.
pub fn piecewise_log_likelihood(theta: &[f64], exceedances: &[f64], thresholds: &[f64]) -> f64 {
    let k = thresholds.len();
    assert_eq!(theta.len(), k + 2, "theta must hold σ_0 and k + 1 shapes");
    let mut lower = Vec::with_capacity(k + 1);
    let mut params = Vec::with_capacity(k + 1);
    let mut carried = Vec::with_capacity(k + 1);
    let (mut sigma, mut u, mut log_s) = (theta[0], 0.0, 0.0);
    for i in 0..=k {
        let xi = theta[i + 1];
        let Ok(p) = GpdParams::new(sigma, xi) else { return f64::NEG_INFINITY };
        lower.push(u);
        params.push(p);
        carried.push(log_s);
        if i < k {
            let width = thresholds[i] - u;
            log_s += p.log_survival(width);
            if !log_s.is_finite() {
                return f64::NEG_INFINITY;
            }
            sigma += xi * width;
            u = thresholds[i];
        }
    }
    let mut total = 0.0;
    for &y in exceedances {
        let i = interval_of(y, thresholds);
        total += params[i].logpdf(y - lower[i]) + carried[i];
    }
    total
}

/// Partial derivatives of `ln S(z)` and `ln f(z)` in `(σ, ξ)`.
struct Partials {
    surv: (f64, f64),
    dens: (f64, f64),
}

fn partials(z: f64, sigma: f64, xi: f64) -> Partials {
    let a = z / sigma;
    let d = 1.0 + xi * a;
    let surv_sigma = a / (sigma * d);
    // (1/ξ²) ln(1 + ξa) - a/(ξ d), expanded near zero
    let surv_xi = if xi.abs() < 1e-6 {
        a * a / 2.0 - 2.0 * xi * a * a * a / 3.0
    } else {
        (xi * a).ln_1p() / (xi * xi) - a / (xi * d)
    };
    Partials { surv: (surv_sigma, surv_xi), dens: (-1.0 / sigma + (1.0 + xi) * surv_sigma, surv_xi - a / d) }
}

/// Score of one observation at a common shape: `σ_i = σ + ξ u_i` and every
/// interval has shape `xi`.
fn observation_score(y: f64, sigma: f64, xi: f64, thresholds: &[f64], out: &mut [f64]) {
    let i = interval_of(y, thresholds);
    out.fill(0.0);
    // derivative of each term in its own σ_j; term i is the density
    let mut d_sigma = Vec::with_capacity(i + 1);
    let mut lower = 0.0;
    for j in 0..=i {
        let sj = sigma + xi * lower;
        if j < i {
            let p = partials(thresholds[j] - lower, sj, xi);
            d_sigma.push(p.surv.0);
            out[j + 1] = p.surv.1;
            lower = thresholds[j];
        } else {
            let p = partials(y - lower, sj, xi);
            d_sigma.push(p.dens.0);
            out[j + 1] = p.dens.1;
        }
    }
    out[0] = d_sigma.iter().sum();
    // ξ_m moves every later σ_j by the width of interval m
    let mut later = 0.0;
    for m in (0..i).rev() {
        later += d_sigma[m + 1];
        let lo = if m == 0 { 0.0 } else { thresholds[m - 1] };
        out[m + 1] += (thresholds[m] - lo) * later;
    }
}

/// Per-observation Fisher information of the piecewise model at a common
/// shape, by quadrature over the fitted distribution.
fn expected_information(params: &GpdParams<f64>, thresholds: &[f64]) -> DMatrix<f64> {
    let m = thresholds.len() + 2;
    let rule = GaussLegendre::new(16.try_into().expect("nonzero degree"));
    let nodes = rule.as_node_weight_pairs();
    let (sigma, xi) = (params.scale, params.shape);
    let mut info = DMatrix::zeros(m, m);
    let mut g = vec![0.0; m];
    let mut add = |y: f64, w: f64, info: &mut DMatrix<f64>| {
        observation_score(y, sigma, xi, thresholds, &mut g);
        if g.iter().all(|v| v.is_finite()) {
            for r in 0..m {
                for c in 0..=r {
                    info[(r, c)] += w * g[r] * g[c];
                }
            }
        }
    };
    let quantile = |p: f64| params.quantile(p).unwrap_or(f64::NAN);
    let mut probs = vec![0.0];
    probs.extend(thresholds.iter().map(|&u| params.cdf_saturating(u)));
    for pair in probs.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for half in [(a, 0.5 * (a + b)), (0.5 * (a + b), b)] {
            let (lo, hi) = half;
            for &(x, w) in nodes {
                let p = 0.5 * ((hi - lo) * x + hi + lo);
                add(quantile(p), 0.5 * (hi - lo) * w, &mut info);
            }
        }
    }
    // top interval: p = 1 - (1 - p_k) e^{-t}; the integrand decays like
    // e^{-(1 + 2ξ) t}
    let top = 1.0 - probs[probs.len() - 1];
    let u_k = thresholds.last().copied().unwrap_or(0.0);
    let excess = |t: f64| if xi.abs() < 1e-12 { t } else { (xi * t).exp_m1() / xi };
    let horizon = 40.0 / (1.0 + 2.0 * xi).min(1.0);
    let panels = (horizon / 2.0).ceil() as usize;
    let width = horizon / panels as f64;
    for q in 0..panels {
        let lo = q as f64 * width;
        for &(x, w) in nodes {
            let t = lo + 0.5 * width * (x + 1.0);
            // above u_k the fit is GPD(σ + ξ u_k, ξ) with survival e^{-t}
            let y = u_k + (sigma + xi * u_k) * excess(t);
            if y.is_finite() {
                add(y, 0.5 * width * w * top * (-t).exp(), &mut info);
            }
        }
    }
    for r in 0..m {
        for c in 0..r {
            info[(c, r)] = info[(r, c)];
        }
    }
    info
}

/// Score test with `k` internal thresholds at the `1/(k+1)` quantiles of the
/// exceedances.
pub fn score_test(exceedances: &[f64], k: usize) -> Result<TestResult> {
    if k == 0 {
        return Err(domain("score test needs at least one internal threshold"));
    }
    let n = exceedances.len();
    let thresholds = decile_thresholds(exceedances, k);
    let mut counts = vec![0usize; k + 1];
    for &y in exceedances {
        counts[interval_of(y, &thresholds)] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c < MIN_PER_INTERVAL) {
        return Err(Error::Unavailable(format!(
            "interval {c} holds {} observations, need {MIN_PER_INTERVAL}",
            counts[c]
        )));
    }
    let fit = fit_mle(exceedances)?;
    if !fit.converged {
        return Err(Error::Unavailable("maximum likelihood fit did not converge".into()));
    }
    if fit.params.shape <= -0.5 {
        return Err(Error::Unavailable(format!("shape {:.3} is at or below -1/2", fit.params.shape)));
    }
    let (sigma, xi) = (fit.params.scale, fit.params.shape);
    let mut u = DVector::zeros(k + 2);
    let mut g = vec![0.0; k + 2];
    for &y in exceedances {
        observation_score(y, sigma, xi, &thresholds, &mut g);
        for (acc, v) in u.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    if u.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::Unavailable("score not finite at the fit".into()));
    }
    let info = expected_information(&fit.params, &thresholds) * n as f64;
    let chol =
        info.cholesky().ok_or_else(|| Error::Unavailable("information matrix is not positive definite".into()))?;
    let statistic = u.dot(&chol.solve(&u)).max(0.0);
    Ok(TestResult {
        test: TestKind::Score,
        statistic,
        p_value: chi2_sf(statistic, k as f64),
        fit,
        n,
        dof: Some(k),
        path: PValuePath::ChiSquare,
        clamped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::neg_log_likelihood;
    use crate::gpd::sample;
    use approx::assert_relative_eq;

    #[test]
    fn reduces_to_gpd_under_constant_shape() {
        let params = GpdParams::new(1.3, 0.2).unwrap();
        let data = sample(300, &params, 9).unwrap();
        let u = decile_thresholds(&data, 9);
        let theta = [1.3, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2];
        assert_relative_eq!(
            piecewise_log_likelihood(&theta, &data, &u),
            -neg_log_likelihood(&params, &data),
            max_relative = 1e-12
        );
    }

    #[test]
    fn interval_membership() {
        let u = [1.0, 2.0];
        assert_eq!(interval_of(0.0, &u), 0);
        assert_eq!(interval_of(1.0, &u), 0);
        assert_eq!(interval_of(1.5, &u), 1);
        assert_eq!(interval_of(2.0, &u), 1);
        assert_eq!(interval_of(7.0, &u), 2);
    }

    #[test]
    fn thresholds_are_deciles() {
        let data: Vec<f64> = (0..=100).map(f64::from).collect();
        let u = decile_thresholds(&data, 9);
        assert_eq!(u, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]);
    }

    #[test]
    fn rejects_zero_intervals_and_sparse_data() {
        let data = sample(20, &GpdParams::new(1.0, 0.1).unwrap(), 3).unwrap();
        assert!(matches!(score_test(&data, 0), Err(Error::Domain(_))));
        assert!(matches!(score_test(&data, 9), Err(Error::Unavailable(_))));
    }

    #[test]
    fn null_sample_gives_moderate_statistic() {
        let data = sample(500, &GpdParams::new(1.0, 0.25).unwrap(), 21).unwrap();
        let r = score_test(&data, 9).unwrap();
        assert_eq!(r.dof, Some(9));
        assert!(r.statistic >= 0.0 && r.statistic < 40.0, "{}", r.statistic);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    fn total_score(data: &[f64], sigma: f64, xi: f64, u: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; u.len() + 2];
        let mut g = vec![0.0; u.len() + 2];
        for &y in data {
            observation_score(y, sigma, xi, u, &mut g);
            total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
        }
        total
    }

    #[test]
    fn analytic_score_matches_differences() {
        for xi in [-0.3, 0.0, 0.3] {
            let data = sample(200, &GpdParams::new(1.5, xi).unwrap(), 8).unwrap();
            let u = decile_thresholds(&data, 4);
            let theta = [1.5, xi, xi, xi, xi, xi];
            let g = total_score(&data, 1.5, xi, &u);
            for j in 0..theta.len() {
                let h = 1e-6;
                let mut up = theta;
                let mut dn = theta;
                up[j] += h;
                dn[j] -= h;
                let fd =
                    (piecewise_log_likelihood(&up, &data, &u) - piecewise_log_likelihood(&dn, &data, &u)) / (2.0 * h);
                assert_relative_eq!(g[j], fd, max_relative = 1e-5, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn restricted_directions_have_zero_score() {
        // At the restricted MLE the score along σ_0 and along a common shift
        // of every shape vanishes.
        let data = sample(400, &GpdParams::new(2.0, 0.1).unwrap(), 4).unwrap();
        let fit = fit_mle(&data).unwrap();
        let u = decile_thresholds(&data, 4);
        let g = total_score(&data, fit.params.scale, fit.params.shape, &u);
        assert!(g[0].abs() < 1e-5, "{}", g[0]);
        assert!(g.iter().skip(1).sum::<f64>().abs() < 1e-5);
    }

    #[test]
    fn information_matches_simulation() {
        let params = GpdParams::new(1.0, 0.2).unwrap();
        let u = [0.3, 1.0, 2.5];
        let info = expected_information(&params, &u);
        let draws = sample(200_000, &params, 12).unwrap();
        let mut g = vec![0.0; 5];
        let mut mc = DMatrix::<f64>::zeros(5, 5);
        for &y in &draws {
            observation_score(y, 1.0, 0.2, &u, &mut g);
            let v = DVector::from_column_slice(&g);
            mc += &v * v.transpose();
        }
        mc /= draws.len() as f64;
        for r in 0..5 {
            for c in 0..5 {
                assert_relative_eq!(info[(r, c)], mc[(r, c)], max_relative = 0.05, epsilon = 2e-3);
            }
        }
        // the mean score is zero
        let mean: f64 = draws
            .iter()
            .map(|&y| {
                observation_score(y, 1.0, 0.2, &u, &mut g);
                g[3]
            })
            .sum::<f64>()
            / draws.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }

    #[test]
    fn null_size_is_close_to_nominal() {
        let params = GpdParams::new(1.0, 0.25).unwrap();
        let rejected =
            (0..400u64).filter(|&s| score_test(&sample(200, &params, s).unwrap(), 9).unwrap().p_value < 0.05).count();
        assert!((8..=40).contains(&rejected), "{rejected} of 400");
    }
}
