use super::{csv_string, proportion_se, Generator};
use crate::error::{domain, Result};
use crate::estimation::fit_mle;
use crate::gof::{run_test, TestKind, TestOptions};
use crate::rng::{derive_seed, stream};
use rayon::prelude::*;
use std::fmt::Write as _;

/// One cell of the power study: a generator at a sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub generator: Generator,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Scenario {
    /// Every scheme of the power study at each sample size.
    pub fn grid(sizes: &[usize], replicates: usize, seed: u64) -> Vec<Scenario> {
        Generator::power_schemes()
            .into_iter()
            .flat_map(|generator| sizes.iter().map(move |&n| Scenario { generator, n, replicates, seed }))
            .collect()
    }
}

/// Settings shared by all cells.
#[derive(Debug, Clone, Copy)]
pub struct PowerConfig {
    pub alpha: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCell {
    pub generator: String,
    pub n: usize,
    pub test: TestKind,
    pub replicates: usize,
    /// Samples removed because the maximum likelihood fit failed.
    pub failed_fits: usize,
    /// Samples on which this test could not be computed.
    pub unavailable: usize,
    pub rejections: usize,
    /// `rejections / valid` with `valid = replicates - failed_fits - unavailable`.
    pub rate: f64,
    pub se: f64,
}

impl PowerCell {
    pub fn valid(&self) -> usize {
        self.replicates - self.failed_fits - self.unavailable
    }
}

#[derive(Debug, Clone, Default)]
pub struct PowerReport {
    pub alpha: f64,
    pub cells: Vec<PowerCell>,
}

impl PowerReport {
    pub fn cell(&self, generator: &Generator, n: usize, test: TestKind) -> Option<&PowerCell> {
        let name = generator.to_string();
        self.cells.iter().find(|c| c.generator == name && c.n == n && c.test == test)
    }

    pub fn to_csv(&self) -> String {
        csv_string(
            &["generator", "n", "test", "replicates", "failed_fits", "unavailable", "rejections", "rate", "se"],
            self.cells.iter().map(|c| {
                vec![
                    c.generator.clone(),
                    c.n.to_string(),
                    c.test.to_string(),
                    c.replicates.to_string(),
                    c.failed_fits.to_string(),
                    c.unavailable.to_string(),
                    c.rejections.to_string(),
                    format!("{:.6}", c.rate),
                    format!("{:.6}", c.se),
                ]
            }),
        )
    }

    pub fn summary(&self) -> String {
        let mut s = format!("Rejection rates (%) at level {}\n", self.alpha);
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<22} n={:<4} {:<6} {:6.1} ± {:4.1}   ({} valid, {} failed fits, {} unavailable)",
                c.generator,
                c.n,
                c.test.name(),
                100.0 * c.rate,
                100.0 * c.se,
                c.valid(),
                c.failed_fits,
                c.unavailable
            );
        }
        s
    }
}

enum Outcome {
    FitFailed,
    Tested(Vec<Option<bool>>),
}

/// Rejection rates of each test on each scenario. A sample whose maximum
/// likelihood fit fails is removed for every test; a test that cannot be
/// computed on a sample is counted as unavailable for that test only.
pub fn power_study(scenarios: &[Scenario], tests: &[TestOptions<'_>], cfg: &PowerConfig) -> Result<PowerReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(domain("alpha must lie in (0, 1)"));
    }
    let mut report = PowerReport { alpha: cfg.alpha, cells: Vec::new() };
    for sc in scenarios {
        if sc.replicates == 0 || sc.n < 2 {
            return Err(domain(format!("scenario {} n={} has no replicates or too few points", sc.generator, sc.n)));
        }
        let keys = [sc.generator.key(), sc.n as u64];
        let outcomes: Vec<Outcome> = (0..sc.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(sc.seed, &[keys[0], keys[1], r as u64]);
                let Ok(data) = sc.generator.sample(sc.n, &mut rng) else { return Outcome::FitFailed };
                match fit_mle(&data) {
                    Ok(f) if f.converged => {}
                    _ => return Outcome::FitFailed,
                }
                Outcome::Tested(
                    tests
                        .iter()
                        .map(|t| {
                            let mut opts = *t;
                            if let Some(b) = opts.bootstrap.as_mut() {
                                b.seed = derive_seed(b.seed, &[keys[0], keys[1], r as u64]);
                            }
                            run_test(&data, &opts).ok().map(|res| res.p_value < cfg.alpha)
                        })
                        .collect(),
                )
            })
            .collect();
        let failed_fits = outcomes.iter().filter(|o| matches!(o, Outcome::FitFailed)).count();
        for (k, t) in tests.iter().enumerate() {
            let results: Vec<Option<bool>> = outcomes
                .iter()
                .filter_map(|o| match o {
                    Outcome::Tested(v) => Some(v[k]),
                    Outcome::FitFailed => None,
                })
                .collect();
            let unavailable = results.iter().filter(|r| r.is_none()).count();
            let rejections = results.iter().filter(|r| **r == Some(true)).count();
            let valid = results.len() - unavailable;
            let rate = if valid > 0 { rejections as f64 / valid as f64 } else { f64::NAN };
            report.cells.push(PowerCell {
                generator: sc.generator.to_string(),
                n: sc.n,
                test: t.kind,
                replicates: sc.replicates,
                failed_fits,
                unavailable,
                rejections,
                rate,
                se: proportion_se(rate, valid),
            });
        }
    }
    Ok(report)
}
