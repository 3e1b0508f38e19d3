//! Anderson–Darling and Cramér–von Mises tests on the probability integral
//! transform of the fitted GPD.

use super::{PValuePath, TestKind, TestResult};
use crate::error::{Error, Result};
use crate::estimation::fit_mle;
use crate::gpd::GpdParams;
use crate::null_dist::{bootstrap_from_fit, Bootstrap, NullTable, StatKind};
use crate::scalar::Scalar;

/// Sorted fitted-CDF values strictly inside the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PitSample<T> {
    pub values: Vec<T>,
    /// Number of values moved onto the clamp bounds.
    pub clamped: usize,
}

impl<T: Scalar> PitSample<T> {
    /// Sorts and clamps arbitrary probabilities.
    pub fn from_probabilities(mut values: Vec<T>) -> Self {
        let bound = clamp_bound::<T>();
        let (lo, hi) = (bound, T::one() - bound);
        let mut clamped = 0;
        for v in values.iter_mut() {
            if v.is_nan() || *v < lo {
                *v = lo;
                clamped += 1;
            } else if *v > hi {
                *v = hi;
                clamped += 1;
            }
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN after clamping"));
        Self { values, clamped }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Distance of the clamp bounds from 0 and 1: 1e-12, or machine epsilon when
/// that is coarser.
fn clamp_bound<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon())
}

/// Fitted CDF values of the exceedances, sorted and clamped into
/// `[1e-12, 1 - 1e-12]`. Points beyond a finite fitted endpoint land on the
/// upper bound and are counted in [`PitSample::clamped`].
pub fn pit_transform<T: Scalar>(exceedances: &[T], params: &GpdParams<T>) -> PitSample<T> {
    let shifted = GpdParams { threshold: T::zero(), ..*params };
    let raw = exceedances.iter().map(|&y| shifted.cdf_saturating(y - params.threshold)).collect();
    let pit = PitSample::from_probabilities(raw);
    if pit.clamped > 0 {
        log::warn!("{} PIT value(s) clamped into the open unit interval", pit.clamped);
    }
    pit
}

/// `A² = -n - (1/n) Σ (2i-1) [ln z_(i) + ln(1 - z_(n+1-i))]`.
pub fn ad_statistic<T: Scalar>(z: &PitSample<T>) -> T {
    let n = z.len();
    let v = &z.values;
    let mut sum = T::zero();
    for i in 0..n {
        let w = T::from_count(2 * i + 1);
        sum = sum + w * (v[i].ln() + (-v[n - 1 - i]).ln_1p());
    }
    let nn = T::from_count(n);
    -nn - sum / nn
}

/// `W² = Σ (z_(i) - (2i-1)/(2n))² + 1/(12n)`.
pub fn cvm_statistic<T: Scalar>(z: &PitSample<T>) -> T {
    let n = z.len();
    let two_n = T::from_count(2 * n);
    let sum = z.values.iter().enumerate().fold(T::zero(), |acc, (i, &zi)| {
        let d = zi - T::from_count(2 * i + 1) / two_n;
        acc + d * d
    });
    sum + T::one() / T::from_count(12 * n)
}

pub fn edf_statistic<T: Scalar>(kind: StatKind, z: &PitSample<T>) -> T {
    match kind {
        StatKind::Ad => ad_statistic(z),
        StatKind::Cvm => cvm_statistic(z),
    }
}

/// EDF test at a single threshold.
///
/// The p-value comes from `table` when the fitted shape lies in its range;
/// otherwise from a parametric bootstrap if `fallback` is given, else the
/// range error is returned.
pub fn edf_test(
    kind: StatKind,
    exceedances: &[f64],
    table: &NullTable,
    fallback: Option<&Bootstrap>,
) -> Result<TestResult> {
    if table.kind != kind {
        return Err(Error::Table(format!("{} table supplied for a {} test", table.kind, kind)));
    }
    let fit = fit_mle(exceedances)?;
    if !fit.converged {
        return Err(Error::Unavailable("maximum likelihood fit did not converge".into()));
    }
    let pit = pit_transform(exceedances, &fit.params);
    let statistic = edf_statistic(kind, &pit);
    let xi = fit.params.shape;
    let (p_value, path) = if table.covers(xi) {
        table.pvalue(statistic, xi)?
    } else if let Some(cfg) = fallback {
        let boot = bootstrap_from_fit(statistic, &fit.params, exceedances.len(), kind, cfg)?;
        (boot.p_value, PValuePath::Bootstrap { size: boot.valid })
    } else {
        let (min, max) = table.xi_range();
        return Err(Error::OutOfTableRange { xi, min, max });
    };
    Ok(TestResult {
        test: match kind {
            StatKind::Ad => TestKind::Ad,
            StatKind::Cvm => TestKind::Cvm,
        },
        statistic,
        p_value,
        n: exceedances.len(),
        fit,
        dof: None,
        path,
        clamped: pit.clamped > 0,
    })
}

pub fn ad_test(exceedances: &[f64], table: &NullTable, fallback: Option<&Bootstrap>) -> Result<TestResult> {
    edf_test(StatKind::Ad, exceedances, table, fallback)
}

pub fn cvm_test(exceedances: &[f64], table: &NullTable, fallback: Option<&Bootstrap>) -> Result<TestResult> {
    edf_test(StatKind::Cvm, exceedances, table, fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pit(v: &[f64]) -> PitSample<f64> {
        PitSample::from_probabilities(v.to_vec())
    }

    #[test]
    fn pit_examples() {
        let p = GpdParams::new(1.0, 0.0).unwrap();
        assert_relative_eq!(pit_transform(&[1.0], &p).values[0], 0.632_120_558_828_557_7, epsilon = 1e-15);
        let (s, x) = (1.7, 0.3);
        let median = s / x * (2f64.powf(x) - 1.0);
        let p = GpdParams::new(s, x).unwrap();
        assert_relative_eq!(pit_transform(&[median], &p).values[0], 0.5, epsilon = 1e-14);
        let z = pit_transform(&[3.0, 0.5, 1.0], &GpdParams::new(1.0, 0.0).unwrap());
        assert!(z.values.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(z.clamped, 0);
    }

    #[test]
    fn pit_clamps_beyond_endpoint() {
        let p = GpdParams::new(1.0, -0.5).unwrap();
        let z = pit_transform(&[0.0, 1.0, 2.5], &p);
        assert_eq!(z.clamped, 2);
        assert_eq!(z.values[0], 1e-12);
        assert_eq!(z.values[2], 1.0 - 1e-12);
    }

    #[test]
    fn ad_examples() {
        assert_relative_eq!(ad_statistic(&pit(&[0.5])), -1.0 + 2.0 * 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(ad_statistic(&pit(&[0.5])), 0.386_294_361_119_890_6, epsilon = 1e-12);
        assert_relative_eq!(ad_statistic(&pit(&[0.7, 0.2])), 0.276_433_101_259_431_44, epsilon = 1e-12);
        let u: Vec<f64> = (1..=100).map(|i| (i as f64 - 0.5) / 100.0).collect();
        let a = ad_statistic(&pit(&u));
        assert_relative_eq!(a, 0.011_495, epsilon = 5e-6);
        assert!(a < 1.0);
    }

    #[test]
    fn cvm_examples() {
        assert_relative_eq!(cvm_statistic(&pit(&[0.5])), 1.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(cvm_statistic(&pit(&[0.2, 0.7])), 0.005 + 1.0 / 24.0, epsilon = 1e-15);
        let n = 37;
        let exact: Vec<f64> = (1..=n).map(|i| (2 * i - 1) as f64 / (2 * n) as f64).collect();
        assert_relative_eq!(cvm_statistic(&pit(&exact)), 1.0 / (12 * n) as f64, epsilon = 1e-15);
    }

    #[test]
    fn single_precision_statistics() {
        let z = PitSample::from_probabilities(vec![0.2f32, 0.7]);
        assert!((ad_statistic(&z) - 0.276_433).abs() < 1e-5);
        assert!((cvm_statistic(&z) - 0.046_666_7).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn statistics_finite_and_bounded(v in prop::collection::vec(0.0f64..=1.0, 1..200)) {
            let z = pit(&v);
            let a = ad_statistic(&z);
            let w = cvm_statistic(&z);
            prop_assert!(a.is_finite() && a >= 0.0);
            prop_assert!(w.is_finite() && w >= 1.0 / (12 * v.len()) as f64 - 1e-15);
        }
    }
}
