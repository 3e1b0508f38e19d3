//! Moran's test based on the maximum product of spacings fit.

use super::{PValuePath, TestKind, TestResult};
use crate::error::{Error, Result};
use crate::estimation::fit_mps;
use crate::scalar::Scalar;
use crate::special::{chi2_sf, EULER_GAMMA};

/// Mean and variance of Moran's statistic under the null and the constants
/// of its chi-square approximation, for `n` observations (`n + 1` spacings).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoranConstants<T> {
    pub mean: T,
    pub variance: T,
    pub c1: T,
    pub c2: T,
}

pub fn moran_constants<T: Scalar>(n: usize) -> MoranConstants<T> {
    let m = T::from_count(n + 1);
    let nn = T::from_count(n);
    let half = T::lit(0.5);
    let mean = m * (m.ln() + T::lit(EULER_GAMMA)) - half - T::one() / (T::lit(12.0) * m);
    let pi2_6 = T::PI() * T::PI() / T::lit(6.0);
    let variance = m * (pi2_6 - T::one()) - half - T::one() / (T::lit(6.0) * m);
    let sd = variance.sqrt();
    MoranConstants { mean, variance, c1: mean - (nn * half).sqrt() * sd, c2: sd / (T::lit(2.0) * nn).sqrt() }
}

/// `T = (M + 1 - C1) / C2`, referred to chi-square with `n` degrees of freedom.
pub fn moran_test(exceedances: &[f64]) -> Result<TestResult> {
    let fit = fit_mps(exceedances)?;
    if !fit.converged || !fit.objective_value.is_finite() {
        return Err(Error::Unavailable("product of spacings fit did not converge".into()));
    }
    let n = exceedances.len();
    let k = moran_constants::<f64>(n);
    let statistic = (fit.objective_value + 1.0 - k.c1) / k.c2;
    Ok(TestResult {
        test: TestKind::Moran,
        statistic,
        p_value: chi2_sf(statistic, n as f64),
        fit,
        n,
        dof: Some(n),
        path: PValuePath::ChiSquare,
        clamped: false,
    })
}
