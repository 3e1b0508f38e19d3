//! Per-site threshold selection and the multi-site batch driver.

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::gof::{TestKind, TestOptions};
use crate::null_dist::{type7_quantile, Bootstrap, NullTable};
use crate::return_levels::{rate_estimate, return_levels, CiMethod, Rate, ReturnLevelEstimate};
use crate::rng::{derive_seed, key_of};
use crate::sequential::{build_ladder, exceedances, selected_fit, StoppingDecision, StoppingRule, ThresholdLadder};
use crate::station::{
    extremal_index, parse_ghcn_dly, percentile_ladder, read_csv, screen_and_filter, station_extremal_index, Rung,
    Screen, StationSeries,
};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

/// Settings of the per-site pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteConfig {
    pub test: TestKind,
    pub rule: StoppingRule,
    pub alpha: f64,
    /// Return periods in years.
    pub periods: Vec<f64>,
    pub ci: CiMethod,
    pub ci_level: f64,
    pub screen: Screen,
    /// Bootstrap size for AD/CVM when the fitted shape is off the table; 0
    /// disables the fallback.
    pub bootstrap: usize,
    pub seed: u64,
    /// Extremal index below which a warning is logged.
    pub theta_warn: f64,
}

impl Default for SiteConfig {
    fn default() -> Self {
        Self {
            test: TestKind::Ad,
            rule: StoppingRule::ForwardStop,
            alpha: 0.05,
            periods: vec![50.0, 100.0, 250.0],
            ci: CiMethod::Profile,
            ci_level: 0.95,
            screen: Screen::default(),
            bootstrap: 999,
            seed: 1,
            theta_warn: 0.9,
        }
    }
}

impl SiteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        if self.periods.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Config("return periods must be positive".into()));
        }
        self.screen.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteStatus {
    Ok,
    AllRejected,
    InsufficientData,
    FitFailed,
}

impl SiteStatus {
    pub const ALL: [SiteStatus; 4] =
        [SiteStatus::Ok, SiteStatus::AllRejected, SiteStatus::InsufficientData, SiteStatus::FitFailed];

    pub fn name(self) -> &'static str {
        match self {
            SiteStatus::Ok => "OK",
            SiteStatus::AllRejected => "ALL_REJECTED",
            SiteStatus::InsufficientData => "INSUFFICIENT_DATA",
            SiteStatus::FitFailed => "FIT_FAILED",
        }
    }
}

impl fmt::Display for SiteStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChosenThreshold {
    pub percentile: f64,
    pub threshold: f64,
    pub n_exceed: usize,
}

#[derive(Debug, Clone)]
pub struct SiteResult {
    pub station_id: String,
    pub status: SiteStatus,
    pub rule: StoppingRule,
    pub test: TestKind,
    /// Season observations used for modelling.
    pub n_obs: usize,
    pub years_available: usize,
    pub rungs: Vec<Rung>,
    pub ladder: Option<ThresholdLadder>,
    /// Every rule applied to the ladder at the configured level.
    pub decisions: Vec<StoppingDecision>,
    pub chosen: Option<ChosenThreshold>,
    pub fit: Option<FitResult>,
    pub rate: Option<Rate>,
    pub theta: Option<f64>,
    /// One entry per configured period; `None` when the level could not be
    /// computed.
    pub return_levels: Vec<Option<ReturnLevelEstimate>>,
    pub message: Option<String>,
}

impl SiteResult {
    fn empty(series: &StationSeries, cfg: &SiteConfig, status: SiteStatus, message: String) -> Self {
        Self {
            station_id: series.station_id.clone(),
            status,
            rule: cfg.rule,
            test: cfg.test,
            n_obs: series.len(),
            years_available: series.years_available,
            rungs: Vec::new(),
            ladder: None,
            decisions: Vec::new(),
            chosen: None,
            fit: None,
            rate: None,
            theta: None,
            return_levels: Vec::new(),
            message: Some(message),
        }
    }

    pub fn decision(&self, rule: StoppingRule) -> Option<&StoppingDecision> {
        self.decisions.iter().find(|d| d.rule == rule)
    }

    /// Percentile chosen by `rule` on this site's ladder.
    pub fn percentile_for(&self, rule: StoppingRule) -> Option<f64> {
        let ladder = self.ladder.as_ref()?;
        let i = self.decision(rule)?.chosen?;
        Some(self.rungs[ladder.steps[i].candidate].percentile)
    }
}

/// Screens a raw station series and runs the selection pipeline on its
/// season days. Failures are reported through the status, never as errors.
pub fn run_site(series: &StationSeries, cfg: &SiteConfig, table: Option<&NullTable>) -> SiteResult {
    let filtered = if series.season_filtered {
        series.clone()
    } else {
        match screen_and_filter(series, &cfg.screen) {
            Ok(s) => s,
            Err(r) => {
                let mut s = series.clone();
                s.years_available = r.years_available;
                let msg = format!("{} available years, need {}", r.years_available, r.needed);
                return SiteResult::empty(&s, cfg, SiteStatus::InsufficientData, msg);
            }
        }
    };
    let values = filtered.values();
    let mut out = SiteResult::empty(&filtered, cfg, SiteStatus::InsufficientData, String::new());
    out.message = None;

    let rungs = match percentile_ladder(&values) {
        Ok(r) => r,
        Err(e) => {
            out.message = Some(e.to_string());
            return out;
        }
    };
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let u75 = type7_quantile(&sorted, 0.75);
    let theta = if series.season_filtered {
        extremal_index(&values, u75)
    } else {
        station_extremal_index(&filtered, u75, &cfg.screen)
    };
    match theta {
        Ok(theta) => {
            if theta < cfg.theta_warn {
                log::warn!("{}: extremal index {theta:.3} suggests clustering", filtered.station_id);
            }
            out.theta = Some(theta);
        }
        Err(e) => log::debug!("{}: extremal index unavailable: {e}", filtered.station_id),
    }

    let thresholds: Vec<f64> = rungs.iter().map(|r| r.threshold).collect();
    out.rungs = rungs;
    let mut opts = TestOptions::new(cfg.test);
    opts.table = table;
    if cfg.bootstrap > 0 {
        let seed = derive_seed(cfg.seed, &[key_of(&filtered.station_id)]);
        opts = opts.with_bootstrap(Bootstrap { size: cfg.bootstrap, seed });
    }
    let ladder = match build_ladder(&values, &thresholds, &opts) {
        Ok(l) => l,
        Err(e) => {
            out.message = Some(e.to_string());
            return out;
        }
    };
    let p = ladder.p_values();
    out.decisions = StoppingRule::ALL.iter().filter_map(|r| r.apply(&p, cfg.alpha).ok()).collect();
    let decision = match cfg.rule.apply(&p, cfg.alpha) {
        Ok(d) => d,
        Err(e) => {
            out.message = Some(e.to_string());
            out.ladder = Some(ladder);
            return out;
        }
    };
    let Some(i) = decision.chosen else {
        out.status = SiteStatus::AllRejected;
        out.ladder = Some(ladder);
        return out;
    };
    let step = &ladder.steps[i];
    out.chosen = Some(ChosenThreshold {
        percentile: out.rungs[step.candidate].percentile,
        threshold: step.threshold,
        n_exceed: step.n_exceed,
    });
    let fit = match selected_fit(&values, &ladder, &decision) {
        Ok(Some(f)) if f.converged => f,
        Ok(_) => {
            out.status = SiteStatus::FitFailed;
            out.message = Some("maximum likelihood fit did not converge".into());
            out.ladder = Some(ladder);
            return out;
        }
        Err(e) => {
            out.status = SiteStatus::FitFailed;
            out.message = Some(e.to_string());
            out.ladder = Some(ladder);
            return out;
        }
    };
    let y = exceedances(&values, step.threshold);
    let rate = rate_estimate(values.len(), y.len()).expect("chosen threshold has exceedances");
    let n_y = cfg.screen.season_length();
    out.return_levels = return_levels(&y, &fit, &rate, n_y, &cfg.periods, cfg.ci, cfg.ci_level)
        .into_iter()
        .map(|r| r.map_err(|e| log::debug!("{}: return level: {e}", filtered.station_id)).ok())
        .collect();
    out.status = SiteStatus::Ok;
    out.rate = Some(rate);
    out.fit = Some(fit);
    out.ladder = Some(ladder);
    out
}

/// Batch settings, read from a `key = value` file and the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchConfig {
    pub site: SiteConfig,
    pub table: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

impl BatchConfig {
    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.site;
        match key {
            "test" => s.test = value.parse()?,
            "rule" => s.rule = value.parse()?,
            "alpha" => s.alpha = parse_num(key, value)?,
            "periods" | "return_periods" => s.periods = parse_list(key, value)?,
            "ci" | "ci_method" => s.ci = value.parse()?,
            "ci_level" => s.ci_level = parse_num(key, value)?,
            "min_years" => s.screen.min_years = parse_num(key, value)?,
            "season" | "season_months" => s.screen.season = parse_list(key, value)?,
            "min_fraction" => s.screen.min_fraction = parse_num(key, value)?,
            "bootstrap" => s.bootstrap = parse_num(key, value)?,
            "seed" => s.seed = parse_num(key, value)?,
            "theta_warn" => s.theta_warn = parse_num(key, value)?,
            "table" => self.table = Some(PathBuf::from(value)),
            "workers" => self.workers = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }
}

/// Reads every station in a `.dly` or `.csv` file.
pub fn read_station_file(path: &Path) -> Result<Vec<StationSeries>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let reader = BufReader::new(File::open(path)?);
    match ext.as_deref() {
        Some("dly") => parse_ghcn_dly(reader),
        Some("csv") => read_csv(reader),
        _ => Err(Error::Config(format!("{}: unsupported file type", path.display()))),
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    /// Sorted by station id.
    pub results: Vec<SiteResult>,
    /// Files that could not be read, with the reason.
    pub file_errors: Vec<(PathBuf, String)>,
    pub periods: Vec<f64>,
}

impl BatchReport {
    pub fn status_counts(&self) -> BTreeMap<SiteStatus, usize> {
        let mut m: BTreeMap<SiteStatus, usize> = SiteStatus::ALL.iter().map(|&s| (s, 0)).collect();
        for r in &self.results {
            *m.get_mut(&r.status).expect("all statuses present") += 1;
        }
        m
    }

    /// 0 when every file was read, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.file_errors.is_empty())
    }

    pub fn to_csv(&self) -> String {
        results_csv(&self.results, &self.periods)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} sites\n", self.results.len());
        for (status, n) in self.status_counts() {
            let _ = writeln!(s, "  {status:<18} {n}");
        }
        let thetas: Vec<f64> = self.results.iter().filter_map(|r| r.theta).collect();
        if !thetas.is_empty() {
            let mut t = thetas.clone();
            t.sort_by(f64::total_cmp);
            let high = t.iter().filter(|&&x| x > 0.9).count() as f64 / t.len() as f64;
            let _ =
                writeln!(s, "  extremal index: median {:.4}, {:.1}% above 0.9", type7_quantile(&t, 0.5), 100.0 * high);
        }
        for (p, e) in &self.file_errors {
            let _ = writeln!(s, "  unreadable {}: {e}", p.display());
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per site.
pub fn results_csv(results: &[SiteResult], periods: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "station_id",
        "status",
        "rule",
        "test",
        "chosen_percentile",
        "chosen_threshold",
        "n_exceed",
        "sigma",
        "xi",
        "se_sigma",
        "se_xi",
        "zeta",
        "theta_hat",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in periods {
        header.extend([format!("rl_{p}"), format!("rl_{p}_lo"), format!("rl_{p}_hi")]);
    }
    w.write_record(&header).expect("in-memory write");
    for r in results {
        let fit = r.fit.as_ref();
        let mut row = vec![
            r.station_id.clone(),
            r.status.to_string(),
            r.rule.to_string(),
            r.test.to_string(),
            opt(r.chosen.map(|c| c.percentile)),
            opt(r.chosen.map(|c| c.threshold)),
            r.chosen.map(|c| c.n_exceed.to_string()).unwrap_or_default(),
            opt(fit.map(|f| f.params.scale)),
            opt(fit.map(|f| f.params.shape)),
            opt(fit.and_then(FitResult::se_scale)),
            opt(fit.and_then(FitResult::se_shape)),
            opt(r.rate.map(|z| z.zeta)),
            opt(r.theta),
        ];
        for k in 0..periods.len() {
            let rl = r.return_levels.get(k).copied().flatten();
            row.extend([opt(rl.map(|e| e.estimate)), opt(rl.map(|e| e.ci_low)), opt(rl.map(|e| e.ci_high))]);
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Station files of a directory in name order.
pub fn station_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("dly") || e.eq_ignore_ascii_case("csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every station found in `dir`. Unreadable files are skipped and
/// recorded; a directory without station files is an error.
pub fn run_batch(dir: &Path, cfg: &BatchConfig, table: Option<&NullTable>) -> Result<BatchReport> {
    cfg.site.validate()?;
    let files = station_files(dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no .dly or .csv files in {}", dir.display())));
    }
    let mut report = BatchReport { periods: cfg.site.periods.clone(), ..Default::default() };
    let mut stations: BTreeMap<String, StationSeries> = BTreeMap::new();
    for f in files {
        match read_station_file(&f) {
            Ok(list) => {
                for s in list {
                    if stations.contains_key(&s.station_id) {
                        log::warn!("{}: station {} already read, ignoring", f.display(), s.station_id);
                        continue;
                    }
                    stations.insert(s.station_id.clone(), s);
                }
            }
            Err(e) => {
                log::error!("{}: {e}", f.display());
                report.file_errors.push((f, e.to_string()));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let series: Vec<StationSeries> = stations.into_values().collect();
    report.results = pool.install(|| series.par_iter().map(|s| run_site(s, &cfg.site, table)).collect());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text() {
        let mut cfg = BatchConfig::default();
        cfg.apply_text("# site settings\ntest = moran\nrule=strongstop\nalpha = 0.1\nperiods = 10, 20\nseason = 12,1,2\nworkers = 3 # threads\n")
            .unwrap();
        assert_eq!(cfg.site.test, TestKind::Moran);
        assert_eq!(cfg.site.rule, StoppingRule::StrongStop);
        assert_eq!(cfg.site.alpha, 0.1);
        assert_eq!(cfg.site.periods, vec![10.0, 20.0]);
        assert_eq!(cfg.site.screen.season, vec![12, 1, 2]);
        assert_eq!(cfg.workers, 3);
        assert!(cfg.clone().apply_text("colour = red").is_err());
        assert!(cfg.clone().apply_text("alpha").is_err());
        assert!(cfg.apply_text("alpha = x").is_err());
    }

    #[test]
    fn constant_site_is_insufficient() {
        let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let obs = (0..400).map(|i| (start + chrono::Days::new(i), 1.0)).collect();
        let mut s = StationSeries::new("C", obs).unwrap();
        s.season_filtered = true;
        let cfg = SiteConfig { test: TestKind::Moran, ..Default::default() };
        let r = run_site(&s, &cfg, None);
        assert_eq!(r.status, SiteStatus::InsufficientData);
        assert!(r.message.is_some());
    }

    #[test]
    fn short_record_is_insufficient() {
        let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let obs = (0..4000).map(|i| (start + chrono::Days::new(i), (i % 17) as f64)).collect();
        let s = StationSeries::new("S", obs).unwrap();
        let r = run_site(&s, &SiteConfig { test: TestKind::Moran, ..Default::default() }, None);
        assert_eq!(r.status, SiteStatus::InsufficientData);
        // the final partial season still has 87% of its days
        assert_eq!(r.years_available, 11);
    }
}
