use super::{csv_string, proportion_se, LEVEL_GRID};
use crate::error::{domain, Result};
use crate::gof::TestOptions;
use crate::gpd::GpdParams;
use crate::null_dist::type7_quantile;
use crate::rng::{derive_seed, stream};
use crate::sequential::{build_ladder, strong_stop, StoppingRule};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Family-wise error of ordered testing when every hypothesis is true.
#[derive(Debug, Clone)]
pub struct FwerConfig {
    pub shapes: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Threshold percentiles of each sample, ascending, in percent.
    pub percentiles: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// Nominal levels in `[0, 1)`.
    pub levels: Vec<f64>,
}

impl Default for FwerConfig {
    fn default() -> Self {
        Self {
            shapes: vec![-0.25, 0.25],
            sizes: vec![50, 100, 200, 400],
            percentiles: (1..=10).map(|i| 5.0 * i as f64).collect(),
            replicates: 2000,
            seed: 4242,
            levels: LEVEL_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwerCell {
    pub shape: f64,
    pub n: usize,
    pub rule: StoppingRule,
    pub level: f64,
    /// Replicates with at least one rejection.
    pub rejections: usize,
    pub valid: usize,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FwerReport {
    pub cells: Vec<FwerCell>,
    /// Replicates whose ladder could not be built, per `(shape, n)`.
    pub failed: Vec<(f64, usize, usize)>,
}

impl FwerReport {
    pub fn cells_for(&self, rule: StoppingRule) -> impl Iterator<Item = &FwerCell> {
        self.cells.iter().filter(move |c| c.rule == rule)
    }

    pub fn to_csv(&self) -> String {
        csv_string(
            &["shape", "n", "rule", "nominal", "observed", "se", "rejections", "replicates"],
            self.cells.iter().map(|c| {
                vec![
                    c.shape.to_string(),
                    c.n.to_string(),
                    c.rule.to_string(),
                    c.level.to_string(),
                    format!("{:.6}", c.rate),
                    format!("{:.6}", c.se),
                    c.rejections.to_string(),
                    c.valid.to_string(),
                ]
            }),
        )
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("Observed FWER under the null (nominal -> observed)\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "xi={:<5} n={:<4} {:<10} {:5.3} -> {:5.3} ± {:5.3}",
                c.shape, c.n, c.rule, c.level, c.rate, c.se
            );
        }
        s
    }
}

/// Under a pure GPD sample every threshold hypothesis is true, so any
/// rejection is a family-wise error. StrongStop errs when `k̂ ≥ 1`; the
/// unadjusted procedure errs when any p-value is at most the level.
pub fn fwer_null_study(cfg: &FwerConfig, test: &TestOptions<'_>) -> Result<FwerReport> {
    if cfg.replicates == 0 {
        return Err(domain("no replicates"));
    }
    if cfg.levels.iter().any(|l| !(*l >= 0.0 && *l < 1.0)) {
        return Err(domain("levels must lie in [0, 1)"));
    }
    let probs: Vec<f64> = cfg.percentiles.iter().map(|p| p / 100.0).collect();
    let mut report = FwerReport::default();
    for &shape in &cfg.shapes {
        let params = GpdParams::new(1.0, shape)?;
        for &n in &cfg.sizes {
            let p_values: Vec<Option<Vec<f64>>> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let keys = [shape.to_bits(), n as u64, r as u64];
                    let mut rng = stream(cfg.seed, &keys);
                    let mut data = vec![0.0; n];
                    params.fill(&mut rng, &mut data);
                    let mut sorted = data.clone();
                    sorted.sort_by(f64::total_cmp);
                    let thresholds: Vec<f64> = probs.iter().map(|&q| type7_quantile(&sorted, q)).collect();
                    let mut opts = *test;
                    if let Some(b) = opts.bootstrap.as_mut() {
                        b.seed = derive_seed(b.seed, &keys);
                    }
                    build_ladder(&data, &thresholds, &opts).ok().map(|l| l.p_values())
                })
                .collect();
            let valid: Vec<&Vec<f64>> = p_values.iter().flatten().collect();
            report.failed.push((shape, n, cfg.replicates - valid.len()));
            for rule in [StoppingRule::StrongStop, StoppingRule::Unadjusted] {
                for &level in &cfg.levels {
                    let rejections = valid
                        .iter()
                        .filter(|p| {
                            level > 0.0
                                && match rule {
                                    StoppingRule::StrongStop => {
                                        strong_stop(p, level).map(|d| d.k_hat > 0).unwrap_or(false)
                                    }
                                    _ => p.iter().any(|&v| v <= level),
                                }
                        })
                        .count();
                    let rate = rejections as f64 / valid.len().max(1) as f64;
                    report.cells.push(FwerCell {
                        shape,
                        n,
                        rule,
                        level,
                        rejections,
                        valid: valid.len(),
                        rate,
                        se: proportion_se(rate, valid.len()),
                    });
                }
            }
        }
    }
    Ok(report)
}
