use super::{csv_string, mean, median_usize, mixture_sample, mixture_tail, LEVEL_GRID};
use crate::error::{domain, Result};
use crate::gof::TestOptions;
use crate::return_levels::{return_level, return_levels, CiMethod, Rate, DEFAULT_PERIODS};
use crate::rng::{derive_seed, stream};
use crate::sequential::{build_ladder, exceedances, StoppingRule, ThresholdLadder};
use crate::special::normal_quantile;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Number of ladder hypotheses that are false: thresholds `1..=34` keep
/// some of the Beta part.
pub const TRUE_CUTOFF: usize = 34;

/// Sequential testing on the Beta/GPD mixture.
#[derive(Debug, Clone)]
pub struct MisspecConfig {
    pub replicates: usize,
    pub seed: u64,
    pub n_beta: usize,
    pub n_gpd: usize,
    /// Points removed between consecutive thresholds.
    pub step: usize,
    pub thresholds: usize,
    pub alpha: f64,
    pub levels: Vec<f64>,
    pub periods: Vec<f64>,
    pub n_y: f64,
    pub ci_level: f64,
}

impl Default for MisspecConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 2016,
            n_beta: 500,
            n_gpd: 500,
            step: 15,
            thresholds: 50,
            alpha: 0.05,
            levels: LEVEL_GRID.to_vec(),
            periods: DEFAULT_PERIODS.to_vec(),
            n_y: 365.0,
            ci_level: 0.95,
        }
    }
}

/// Mean bias, mean squared error and interval coverage of one parameter
/// under one rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub rule: StoppingRule,
    /// `xi` or `z<N>`.
    pub parameter: String,
    pub true_value: f64,
    pub mean_bias: f64,
    pub mse: f64,
    pub coverage: f64,
    /// Replicates contributing (a threshold was selected and the interval exists).
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MisspecReport {
    pub alpha: f64,
    /// Rejection counts `k̂` per rule at `alpha`, one per valid replicate.
    pub k_hat: BTreeMap<&'static str, Vec<usize>>,
    /// Observed false discovery rate of ForwardStop per nominal level.
    pub fdr_forward: Vec<(f64, f64)>,
    /// Observed family-wise error of StrongStop per nominal level.
    pub fwer_strong: Vec<(f64, f64)>,
    pub parameters: Vec<ParameterSummary>,
    /// Replicates whose ladder could not be built.
    pub failed: usize,
}

impl MisspecReport {
    pub fn k_hats(&self, rule: StoppingRule) -> &[usize] {
        self.k_hat.get(rule.name()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn median_k_hat(&self, rule: StoppingRule) -> f64 {
        median_usize(self.k_hats(rule))
    }

    pub fn parameter(&self, rule: StoppingRule, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.rule == rule && p.parameter == name)
    }

    /// Frequency of each `k̂` per rule.
    pub fn frequencies_csv(&self) -> String {
        let mut rows = Vec::new();
        for (rule, ks) in &self.k_hat {
            let mut freq = BTreeMap::new();
            for &k in ks {
                *freq.entry(k).or_insert(0usize) += 1;
            }
            for (k, c) in freq {
                rows.push(vec![rule.to_string(), k.to_string(), c.to_string()]);
            }
        }
        csv_string(&["rule", "k_hat", "count"], rows)
    }

    /// Observed against nominal error rates.
    pub fn curves_csv(&self) -> String {
        let fdr =
            self.fdr_forward.iter().map(|(l, o)| vec!["forwardstop_fdr".into(), l.to_string(), format!("{o:.6}")]);
        let fwer =
            self.fwer_strong.iter().map(|(l, o)| vec!["strongstop_fwer".into(), l.to_string(), format!("{o:.6}")]);
        csv_string(&["curve", "nominal", "observed"], fdr.chain(fwer))
    }

    pub fn parameters_csv(&self) -> String {
        csv_string(
            &["rule", "parameter", "true_value", "mean_bias", "mse", "coverage", "count"],
            self.parameters.iter().map(|p| {
                vec![
                    p.rule.to_string(),
                    p.parameter.clone(),
                    format!("{:.6}", p.true_value),
                    format!("{:.6}", p.mean_bias),
                    format!("{:.6}", p.mse),
                    format!("{:.4}", p.coverage),
                    p.count.to_string(),
                ]
            }),
        )
    }

    pub fn summary(&self) -> String {
        let mut s = format!("Misspecification study at level {} ({} failed replicates)\n", self.alpha, self.failed);
        for rule in StoppingRule::ALL {
            let _ = writeln!(s, "median k_hat {:<12} {}", rule.name(), self.median_k_hat(rule));
        }
        for (l, o) in &self.fdr_forward {
            let _ = writeln!(s, "forwardstop FDR  nominal {l:5.3} observed {o:5.3}");
        }
        for (l, o) in &self.fwer_strong {
            let _ = writeln!(s, "strongstop FWER  nominal {l:5.3} observed {o:5.3}");
        }
        for p in &self.parameters {
            let _ = writeln!(
                s,
                "{:<12} {:<5} bias {:>9.4} mse {:>10.4} coverage {:5.3} (n={})",
                p.rule.name(),
                p.parameter,
                p.mean_bias,
                p.mse,
                p.coverage,
                p.count
            );
        }
        s
    }
}

/// Estimation error of one parameter in one replicate.
#[derive(Debug, Clone, Copy)]
struct Draw {
    error: f64,
    covered: bool,
}

/// Results of one replicate.
struct Replicate {
    k_hat: [usize; 3],
    fdp_forward: Vec<f64>,
    error_strong: Vec<bool>,
    /// `[rule][parameter]`, parameter 0 the shape then each period.
    draws: Vec<Vec<Option<Draw>>>,
}

/// Thresholds `u_1 = 0` and `u_k = x_(step·(k-1))`.
fn ladder_thresholds(sorted: &[f64], step: usize, count: usize) -> Vec<f64> {
    (0..count).map(|k| if k == 0 { 0.0 } else { sorted[step * k - 1] }).collect()
}

fn true_return_level(period: f64, n_y: f64, zeta: f64) -> Result<f64> {
    return_level(&mixture_tail(), zeta, n_y, period)
}

fn false_discoveries(ladder: &ThresholdLadder, k_hat: usize) -> usize {
    ladder.steps[..k_hat].iter().filter(|s| s.candidate >= TRUE_CUTOFF).count()
}

pub fn misspec_study(cfg: &MisspecConfig, test: &TestOptions<'_>) -> Result<MisspecReport> {
    let total = cfg.n_beta + cfg.n_gpd;
    if cfg.replicates == 0 || cfg.thresholds < 2 || cfg.step * (cfg.thresholds - 1) >= total {
        return Err(domain("study needs replicates and a ladder that fits inside the sample"));
    }
    if cfg.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(domain("levels must lie in (0, 1)"));
    }
    let tail_rate = cfg.n_gpd as f64 / total as f64;
    let truths: Vec<f64> = std::iter::once(Ok(mixture_tail().shape))
        .chain(cfg.periods.iter().map(|&p| true_return_level(p, cfg.n_y, tail_rate)))
        .collect::<Result<_>>()?;
    let z_crit = normal_quantile(0.5 + cfg.ci_level / 2.0);

    let replicates: Vec<Option<Replicate>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, &[r as u64]);
            let data = mixture_sample(cfg.n_beta, cfg.n_gpd, &mut rng).ok()?;
            let mut sorted = data.clone();
            sorted.sort_by(f64::total_cmp);
            let thresholds = ladder_thresholds(&sorted, cfg.step, cfg.thresholds);
            let mut opts = *test;
            if let Some(b) = opts.bootstrap.as_mut() {
                b.seed = derive_seed(b.seed, &[r as u64]);
            }
            let ladder = build_ladder(&data, &thresholds, &opts).ok()?;
            let p = ladder.p_values();

            let mut k_hat = [0; 3];
            let mut cache: BTreeMap<usize, Vec<Option<Draw>>> = BTreeMap::new();
            let mut draws = Vec::with_capacity(3);
            for (i, rule) in StoppingRule::ALL.iter().enumerate() {
                let d = rule.apply(&p, cfg.alpha).ok()?;
                k_hat[i] = d.k_hat;
                let row = match d.chosen {
                    None => vec![None; truths.len()],
                    Some(c) => cache
                        .entry(c)
                        .or_insert_with(|| estimate_at(&data, &ladder, c, total, cfg, &truths, z_crit))
                        .clone(),
                };
                draws.push(row);
            }
            let fdp_forward = cfg
                .levels
                .iter()
                .map(|&l| {
                    let k = StoppingRule::ForwardStop.apply(&p, l).map(|d| d.k_hat).unwrap_or(0);
                    if k == 0 {
                        0.0
                    } else {
                        false_discoveries(&ladder, k) as f64 / k as f64
                    }
                })
                .collect();
            let error_strong = cfg
                .levels
                .iter()
                .map(|&l| {
                    let k = StoppingRule::StrongStop.apply(&p, l).map(|d| d.k_hat).unwrap_or(0);
                    false_discoveries(&ladder, k) > 0
                })
                .collect();
            Some(Replicate { k_hat, fdp_forward, error_strong, draws })
        })
        .collect();

    let valid: Vec<&Replicate> = replicates.iter().flatten().collect();
    let mut report = MisspecReport { alpha: cfg.alpha, failed: cfg.replicates - valid.len(), ..Default::default() };
    for (i, rule) in StoppingRule::ALL.iter().enumerate() {
        report.k_hat.insert(rule.name(), valid.iter().map(|r| r.k_hat[i]).collect());
    }
    for (j, &level) in cfg.levels.iter().enumerate() {
        let fdp: Vec<f64> = valid.iter().map(|r| r.fdp_forward[j]).collect();
        report.fdr_forward.push((level, mean(&fdp)));
        let errs = valid.iter().filter(|r| r.error_strong[j]).count();
        report.fwer_strong.push((level, errs as f64 / valid.len().max(1) as f64));
    }
    let names: Vec<String> =
        std::iter::once("xi".to_string()).chain(cfg.periods.iter().map(|p| format!("z{p}"))).collect();
    for (i, rule) in StoppingRule::ALL.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            let ds: Vec<Draw> = valid.iter().filter_map(|r| r.draws[i][j]).collect();
            let errors: Vec<f64> = ds.iter().map(|d| d.error).collect();
            let squares: Vec<f64> = errors.iter().map(|e| e * e).collect();
            report.parameters.push(ParameterSummary {
                rule: *rule,
                parameter: name.clone(),
                true_value: truths[j],
                mean_bias: mean(&errors),
                mse: mean(&squares),
                coverage: ds.iter().filter(|d| d.covered).count() as f64 / ds.len().max(1) as f64,
                count: ds.len(),
            });
        }
    }
    Ok(report)
}

/// Shape and return-level errors at ladder step `c`.
fn estimate_at(
    data: &[f64],
    ladder: &ThresholdLadder,
    c: usize,
    total: usize,
    cfg: &MisspecConfig,
    truths: &[f64],
    z_crit: f64,
) -> Vec<Option<Draw>> {
    let step = &ladder.steps[c];
    let mut fit = step.result.fit.clone();
    fit.params.threshold = step.threshold;
    let y = exceedances(data, step.threshold);
    let mut out = Vec::with_capacity(truths.len());
    out.push(fit.se_shape().map(|se| {
        let err = fit.params.shape - truths[0];
        Draw { error: err, covered: err.abs() <= z_crit * se }
    }));
    let rate = Rate { zeta: y.len() as f64 / total as f64, se: 0.0 };
    let levels = return_levels(&y, &fit, &rate, cfg.n_y, &cfg.periods, CiMethod::Profile, cfg.ci_level);
    for (rl, truth) in levels.into_iter().zip(&truths[1..]) {
        out.push(
            rl.ok().map(|e| Draw { error: e.estimate - truth, covered: e.ci_low <= *truth && *truth <= e.ci_high }),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_removes_fifteen_points_per_step() {
        let sorted: Vec<f64> = (1..=1000).map(f64::from).collect();
        let u = ladder_thresholds(&sorted, 15, 50);
        assert_eq!(u.len(), 50);
        assert_eq!(exceedances(&sorted, u[0]).len(), 1000);
        assert_eq!(exceedances(&sorted, u[33]).len(), 505);
        assert_eq!(exceedances(&sorted, u[34]).len(), 490);
        assert_eq!(exceedances(&sorted, u[49]).len(), 265);
    }

    #[test]
    fn true_levels() {
        let z = true_return_level(100.0, 365.0, 0.5).unwrap();
        assert!((z - (5.0 + 8.0 * ((100.0f64 * 365.0 * 0.5).powf(0.25) - 1.0))).abs() < 1e-10);
    }
}
