//! Monte Carlo studies of the tests and stopping rules.
//!
//! Every replicate draws from its own ChaCha8 stream derived from the master
//! seed and the cell coordinates (see [`crate::rng::derive_seed`]), so each
//! cell is reproducible on its own and independent of thread count.

mod misspec;
mod null_fwer;
mod power;

pub use misspec::{misspec_study, MisspecConfig, MisspecReport, ParameterSummary, TRUE_CUTOFF};
pub use null_fwer::{fwer_null_study, FwerCell, FwerConfig, FwerReport};
pub use power::{power_study, PowerCell, PowerConfig, PowerReport, Scenario};

use crate::error::{Error, Result};
use crate::gpd::GpdParams;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal, Weibull};
use std::fmt;

/// Nominal levels at which observed error rates are reported.
pub const LEVEL_GRID: [f64; 8] = [0.01, 0.025, 0.05, 0.075, 0.10, 0.15, 0.20, 0.25];

/// Data-generating schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Gamma {
        shape: f64,
        scale: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Weibull {
        scale: f64,
        shape: f64,
    },
    /// Per-observation fair coin between GPD(1, a) and GPD(1, b).
    GpdMix {
        a: f64,
        b: f64,
    },
    Gpd {
        scale: f64,
        shape: f64,
    },
    /// Half 5·Beta(2, 1) below 5, half 5 + GPD(2, 0.25) above.
    BetaGpdMix,
}

impl Generator {
    /// The alternatives and the null of the power study.
    pub fn power_schemes() -> Vec<Generator> {
        vec![
            Generator::Gamma { shape: 2.0, scale: 1.0 },
            Generator::LogNormal { mu: 0.0, sigma: 1.0 },
            Generator::Weibull { scale: 1.0, shape: 0.75 },
            Generator::Weibull { scale: 1.0, shape: 1.25 },
            Generator::GpdMix { a: -0.4, b: 0.4 },
            Generator::GpdMix { a: 0.0, b: 0.4 },
            Generator::GpdMix { a: -0.25, b: 0.25 },
            Generator::Gpd { scale: 1.0, shape: 0.25 },
        ]
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let bad = |e: &dyn fmt::Display| Error::Domain(format!("{self}: {e}"));
        Ok(match *self {
            Generator::Gamma { shape, scale } => {
                let d = Gamma::new(shape, scale).map_err(|e| bad(&e))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Generator::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).map_err(|e| bad(&e))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Generator::Weibull { scale, shape } => {
                let d = Weibull::new(scale, shape).map_err(|e| bad(&e))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Generator::GpdMix { a, b } => {
                let pa = GpdParams::new(1.0, a)?;
                let pb = GpdParams::new(1.0, b)?;
                (0..n).map(|_| if rng.random::<bool>() { pa.draw(rng) } else { pb.draw(rng) }).collect()
            }
            Generator::Gpd { scale, shape } => {
                let p = GpdParams::new(scale, shape)?;
                (0..n).map(|_| p.draw(rng)).collect()
            }
            Generator::BetaGpdMix => mixture_sample(n / 2, n - n / 2, rng)?,
        })
    }

    /// Stable key for seed derivation.
    pub fn key(&self) -> u64 {
        crate::rng::key_of(&self.to_string())
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Gamma { shape, scale } => write!(f, "Gamma({shape}, {scale})"),
            Generator::LogNormal { mu, sigma } => write!(f, "LogNormal({mu}, {sigma})"),
            Generator::Weibull { scale, shape } => write!(f, "Weibull({scale}, {shape})"),
            Generator::GpdMix { a, b } => write!(f, "GPDMix({a}, {b})"),
            Generator::Gpd { scale, shape } => write!(f, "GPD({scale}, {shape})"),
            Generator::BetaGpdMix => f.write_str("BetaGPDMix"),
        }
    }
}

/// Changepoint of the Beta/GPD mixture.
pub const MIXTURE_CHANGEPOINT: f64 = 5.0;

/// GPD above the mixture changepoint.
pub fn mixture_tail() -> GpdParams<f64> {
    GpdParams { scale: 2.0, shape: 0.25, threshold: MIXTURE_CHANGEPOINT }
}

/// `n1` draws of `5·Beta(2, 1)` followed by `n2` draws of `5 + GPD(2, 0.25)`.
pub fn mixture_sample<R: Rng + ?Sized>(n1: usize, n2: usize, rng: &mut R) -> Result<Vec<f64>> {
    let beta = Beta::new(2.0, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let tail = GpdParams::new(2.0, 0.25)?;
    let mut out = Vec::with_capacity(n1 + n2);
    out.extend((0..n1).map(|_| MIXTURE_CHANGEPOINT * beta.sample(rng)));
    out.extend((0..n2).map(|_| MIXTURE_CHANGEPOINT + tail.draw(rng)));
    Ok(out)
}

/// Mixture sample from a seeded stream.
pub fn mixture_generator(n1: usize, n2: usize, seed: u64) -> Result<Vec<f64>> {
    mixture_sample(n1, n2, &mut crate::rng::stream(seed, &[]))
}

/// Monte Carlo standard error of a proportion.
pub fn proportion_se(rate: f64, replicates: usize) -> f64 {
    if replicates == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / replicates as f64).sqrt()
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        compensated_sum(values.iter().copied()) / values.len() as f64
    }
}

pub(crate) fn median_usize(values: &[usize]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    }
}

pub(crate) fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn mixture_construction() {
        let x = mixture_generator(500, 500, 3).unwrap();
        assert_eq!(x.len(), 1000);
        assert!(x[..500].iter().all(|&v| v > 0.0 && v < 5.0));
        assert!(x[500..].iter().all(|&v| v >= 5.0));
        let m = mean(&x[..500]);
        assert!((m - 10.0 / 3.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn generators_are_reproducible() {
        for g in Generator::power_schemes() {
            let a = g.sample(20, &mut stream(1, &[g.key()])).unwrap();
            let b = g.sample(20, &mut stream(1, &[g.key()])).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median_usize(&[3, 1, 2]), 2.0);
        assert_eq!(median_usize(&[4, 1, 2, 3]), 2.5);
    }
}
