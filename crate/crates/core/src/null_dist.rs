//! Null distributions of the Anderson–Darling and Cramér–von Mises
//! statistics for the GPD with estimated parameters.
//!
//! The null distribution depends on the shape only. A [`NullTable`] holds,
//! for each shape on a grid, Monte Carlo quantiles of the statistic at a
//! descending grid of upper-tail probabilities. p-values are read off by
//! interpolating linearly across shape rows and log-linearly (in `-ln p`)
//! across probability columns. Statistics beyond the smallest tabled
//! probability are handled by a least-squares line of `-ln p` on the
//! quantiles over `p ∈ [0.001, 0.05]`, exploiting the exponential tail.
//!
//! Quantiles are estimated from the sorted replicates by linear
//! interpolation between order statistics (Hyndman–Fan type 7).

use crate::error::{Error, Result};
use crate::estimation::fit_mle;
use crate::gof::{edf_statistic, pit_transform, PValuePath};
use crate::gpd::GpdParams;
use crate::rng::{derive_seed, stream};
use rayon::prelude::*;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::str::FromStr;

/// Replicates simulated per random stream during a build.
const CHUNK: usize = 1000;

/// Largest fraction of failed fits tolerated in a table row.
const MAX_ROW_FAILURE: f64 = 0.05;

/// Largest fraction of failed bootstrap refits.
const MAX_BOOTSTRAP_FAILURE: f64 = 0.20;

/// Columns used by the tail regression.
const TAIL_FIT_RANGE: (f64, f64) = (0.001, 0.05);

const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatKind {
    Ad,
    Cvm,
}

impl StatKind {
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Ad => "AD",
            StatKind::Cvm => "CVM",
        }
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AD" => Ok(StatKind::Ad),
            "CVM" => Ok(StatKind::Cvm),
            other => Err(Error::Table(format!("unknown statistic kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableMeta {
    pub replicates: usize,
    pub n: usize,
    pub seed: u64,
    /// Non-converged fits discarded per shape row.
    pub failed: Vec<usize>,
    pub quantile_method: String,
    /// Free-form build stamp such as the build duration; not produced by
    /// [`build_tables`].
    pub built: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullTable {
    pub kind: StatKind,
    pub xi_grid: Vec<f64>,
    /// Upper-tail probabilities, strictly descending.
    pub upper_tail_probs: Vec<f64>,
    /// `quantiles[row][col]`: statistic exceeded with probability
    /// `upper_tail_probs[col]` when the shape is `xi_grid[row]`.
    pub quantiles: Vec<Vec<f64>>,
    pub meta: TableMeta,
}

/// Shape grid from -0.5 to 1.0 in steps of 0.1.
pub fn default_xi_grid() -> Vec<f64> {
    (-5..=10).map(|i| i as f64 / 10.0).collect()
}

/// Upper-tail probabilities 0.999, 0.998, …, 0.001.
pub fn default_probs() -> Vec<f64> {
    (1..=999).rev().map(|i| i as f64 / 1000.0).collect()
}

/// Settings of a Monte Carlo table build.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub xi_grid: Vec<f64>,
    pub probs: Vec<f64>,
    pub replicates: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { xi_grid: default_xi_grid(), probs: default_probs(), replicates: 100_000, n: 1000, seed: 20_160_101 }
    }
}

/// Type-7 quantile of sorted data at lower-tail probability `q`.
pub fn type7_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn strictly_ascending(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn validate_grids(xi_grid: &[f64], probs: &[f64]) -> Result<()> {
    if xi_grid.is_empty() || !strictly_ascending(xi_grid) || xi_grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Table("shape grid must be finite, sorted and unique".into()));
    }
    if probs.len() < 2 || !probs.windows(2).all(|w| w[0] > w[1]) || probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::Table("probabilities must be strictly descending inside (0, 1)".into()));
    }
    Ok(())
}

/// Simulates the null distributions of several statistics from the same
/// replicates and returns one table per requested kind.
///
/// Replicates are generated in chunks of 1000, each chunk from its own
/// ChaCha8 stream keyed by `(seed, shape bits, chunk index)`, so a row is
/// reproducible independently of the grid it belongs to and of thread count.
pub fn build_tables(kinds: &[StatKind], cfg: &BuildConfig) -> Result<Vec<NullTable>> {
    validate_grids(&cfg.xi_grid, &cfg.probs)?;
    if cfg.replicates < 10_000 {
        return Err(Error::Table(format!("need at least 10^4 replicates, got {}", cfg.replicates)));
    }
    if cfg.n < 100 {
        return Err(Error::Table(format!("need sample size at least 100, got {}", cfg.n)));
    }
    if kinds.is_empty() {
        return Err(Error::Table("no statistic requested".into()));
    }

    let mut rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.xi_grid.len());
    let mut failed = Vec::with_capacity(cfg.xi_grid.len());
    for &xi in &cfg.xi_grid {
        let (row, fails) = simulate_row(kinds, xi, cfg)?;
        rows.push(row);
        failed.push(fails);
    }

    let meta = TableMeta {
        replicates: cfg.replicates,
        n: cfg.n,
        seed: cfg.seed,
        failed,
        quantile_method: "type7".into(),
        built: None,
    };
    let tables = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| NullTable {
            kind,
            xi_grid: cfg.xi_grid.clone(),
            upper_tail_probs: cfg.probs.clone(),
            quantiles: rows.iter().map(|r| r[k].clone()).collect(),
            meta: meta.clone(),
        })
        .collect::<Vec<_>>();
    for t in &tables {
        t.check()?;
    }
    Ok(tables)
}

/// Builds a single table; see [`build_tables`].
pub fn build_table(kind: StatKind, cfg: &BuildConfig) -> Result<NullTable> {
    Ok(build_tables(&[kind], cfg)?.remove(0))
}

/// Quantile rows (one per kind) and the failed-fit count for one shape.
fn simulate_row(kinds: &[StatKind], xi: f64, cfg: &BuildConfig) -> Result<(Vec<Vec<f64>>, usize)> {
    let params = GpdParams::new(1.0, xi)?;
    let chunks = cfg.replicates.div_ceil(CHUNK);
    let row_seed = derive_seed(cfg.seed, &[xi.to_bits()]);
    let per_chunk: Vec<(Vec<Vec<f64>>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(cfg.replicates - c * CHUNK);
            let mut rng = stream(row_seed, &[c as u64]);
            let mut sample = vec![0.0; cfg.n];
            let mut stats = vec![Vec::with_capacity(count); kinds.len()];
            let mut fails = 0;
            for _ in 0..count {
                params.fill(&mut rng, &mut sample);
                match fit_mle(&sample) {
                    Ok(fit) if fit.converged => {
                        let z = pit_transform(&sample, &fit.params);
                        for (k, kind) in kinds.iter().enumerate() {
                            stats[k].push(edf_statistic(*kind, &z));
                        }
                    }
                    _ => fails += 1,
                }
            }
            (stats, fails)
        })
        .collect();

    let fails: usize = per_chunk.iter().map(|c| c.1).sum();
    if fails as f64 > MAX_ROW_FAILURE * cfg.replicates as f64 {
        return Err(Error::Table(format!("row xi = {xi}: {fails} of {} fits failed (limit 5%)", cfg.replicates)));
    }
    let rows = (0..kinds.len())
        .map(|k| {
            let mut all: Vec<f64> = per_chunk.iter().flat_map(|c| c.0[k].iter().copied()).collect();
            all.sort_by(f64::total_cmp);
            cfg.probs.iter().map(|p| type7_quantile(&all, 1.0 - p)).collect()
        })
        .collect();
    Ok((rows, fails))
}

impl NullTable {
    /// The table shipped with the crate (`10^5` replicates of `n = 1000`).
    pub fn bundled(kind: StatKind) -> Result<Self> {
        let text = match kind {
            StatKind::Ad => include_str!("../tables/ad.txt"),
            StatKind::Cvm => include_str!("../tables/cvm.txt"),
        };
        Self::read_from(text.as_bytes())
    }

    /// Validates grid ordering and row monotonicity.
    pub fn check(&self) -> Result<()> {
        validate_grids(&self.xi_grid, &self.upper_tail_probs)?;
        if self.quantiles.len() != self.xi_grid.len() {
            return Err(Error::Table("row count does not match shape grid".into()));
        }
        for (row, xi) in self.quantiles.iter().zip(&self.xi_grid) {
            if row.len() != self.upper_tail_probs.len() {
                return Err(Error::Table(format!("row xi = {xi} has wrong length")));
            }
            if !strictly_ascending(row) {
                return Err(Error::Table(format!("row xi = {xi} is not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn xi_range(&self) -> (f64, f64) {
        (self.xi_grid[0], *self.xi_grid.last().unwrap())
    }

    pub fn covers(&self, xi: f64) -> bool {
        let (lo, hi) = self.xi_range();
        xi >= lo && xi <= hi
    }

    /// Quantile row for an arbitrary shape inside the grid, linear in shape.
    pub fn row_at(&self, xi: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.xi_range();
        if !self.covers(xi) {
            return Err(Error::OutOfTableRange { xi, min: lo, max: hi });
        }
        let j = match self.xi_grid.iter().position(|&g| g >= xi) {
            Some(0) | None => return Ok(self.quantiles[0].clone()),
            Some(j) if self.xi_grid[j] == xi => return Ok(self.quantiles[j].clone()),
            Some(j) => j,
        };
        let (x0, x1) = (self.xi_grid[j - 1], self.xi_grid[j]);
        let w = (xi - x0) / (x1 - x0);
        Ok(self.quantiles[j - 1].iter().zip(&self.quantiles[j]).map(|(a, b)| a + w * (b - a)).collect())
    }

    /// p-value of `statistic` at estimated shape `xi_hat`.
    pub fn pvalue(&self, statistic: f64, xi_hat: f64) -> Result<(f64, PValuePath)> {
        let row = self.row_at(xi_hat)?;
        pvalue_in_row(statistic, &row, &self.upper_tail_probs)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |v: &[f64], f: &dyn Fn(f64) -> String| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(",");
        let mut header = String::new();
        let _ = writeln!(header, "#kind: {}", self.kind);
        let _ = writeln!(header, "#n: {}", self.meta.n);
        let _ = writeln!(header, "#replicates: {}", self.meta.replicates);
        let _ = writeln!(header, "#seed: {}", self.meta.seed);
        let _ = writeln!(header, "#quantile: {}", self.meta.quantile_method);
        if let Some(b) = &self.meta.built {
            let _ = writeln!(header, "#built: {b}");
        }
        let failed: Vec<String> = self.meta.failed.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(header, "#failed: {}", failed.join(","));
        let _ = writeln!(header, "#xi: {}", join(&self.xi_grid, &|x| format!("{x}")));
        let _ = writeln!(header, "#p: {}", join(&self.upper_tail_probs, &|x| format!("{x}")));
        w.write_all(header.as_bytes())?;
        for row in &self.quantiles {
            writeln!(w, "{}", join(row, &|x| format!("{x:.8e}")))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut kind = None;
        let mut meta =
            TableMeta { replicates: 0, n: 0, seed: 0, failed: Vec::new(), quantile_method: String::new(), built: None };
        let mut xi_grid = Vec::new();
        let mut probs = Vec::new();
        let mut quantiles = Vec::new();
        let floats = |s: &str, line: usize| -> Result<Vec<f64>> {
            s.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{t:?}: {e}") }))
                .collect()
        };
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::Parse { line: lineno, msg: "header without ':'".into() })?;
                let value = value.trim();
                let int = |v: &str| v.parse::<u64>().map_err(|e| Error::Parse { line: lineno, msg: e.to_string() });
                match key.trim() {
                    "kind" => kind = Some(value.parse::<StatKind>()?),
                    "n" => meta.n = int(value)? as usize,
                    "replicates" => meta.replicates = int(value)? as usize,
                    "seed" => meta.seed = int(value)?,
                    "quantile" => meta.quantile_method = value.to_string(),
                    "built" => meta.built = Some(value.to_string()),
                    "failed" if !value.is_empty() => {
                        meta.failed =
                            value.split(',').map(|v| int(v.trim()).map(|x| x as usize)).collect::<Result<_>>()?
                    }
                    "xi" => xi_grid = floats(value, lineno)?,
                    "p" => probs = floats(value, lineno)?,
                    _ => {}
                }
            } else {
                quantiles.push(floats(line, lineno)?);
            }
        }
        let table = NullTable {
            kind: kind.ok_or_else(|| Error::Table("missing #kind header".into()))?,
            xi_grid,
            upper_tail_probs: probs,
            quantiles,
            meta,
        };
        table.check()?;
        Ok(table)
    }
}

/// p-value of `statistic` against one quantile row.
pub fn pvalue_in_row(statistic: f64, row: &[f64], probs: &[f64]) -> Result<(f64, PValuePath)> {
    if statistic.is_nan() {
        return Err(Error::Domain("NaN statistic".into()));
    }
    let last = row.len() - 1;
    if statistic < row[0] {
        return Ok((probs[0], PValuePath::BelowTable));
    }
    if statistic > row[last] {
        return Ok((tail_extrapolate(statistic, row, probs)?, PValuePath::TailExtrapolated));
    }
    // first column whose quantile is ≥ the statistic
    let c = row.partition_point(|&q| q < statistic);
    if row[c] == statistic {
        return Ok((probs[c], PValuePath::Interpolated));
    }
    let t = (statistic - row[c - 1]) / (row[c] - row[c - 1]);
    let lp = (1.0 - t) * -probs[c - 1].ln() + t * -probs[c].ln();
    Ok(((-lp).exp(), PValuePath::Interpolated))
}

/// Intercept and slope of the least-squares line of `-ln p` on the quantile
/// over columns with `p ∈ [0.001, 0.05]`.
pub fn tail_line(row: &[f64], probs: &[f64]) -> Result<(f64, f64)> {
    if !strictly_ascending(row) {
        return Err(Error::Table("quantile row is not strictly increasing".into()));
    }
    let (lo, hi) = TAIL_FIT_RANGE;
    let pts: Vec<(f64, f64)> = row
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= lo * (1.0 - 1e-9) && p <= hi * (1.0 + 1e-9))
        .map(|(&q, &p)| (q, -p.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Table("fewer than two columns in the tail regression range".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(Error::Table("tail regression slope is not positive".into()));
    }
    Ok((my - slope * mx, slope))
}

/// Extrapolated upper-tail probability for a statistic beyond the table.
pub fn tail_extrapolate(statistic: f64, row: &[f64], probs: &[f64]) -> Result<f64> {
    let (a, b) = tail_line(row, probs)?;
    Ok((-(a + b * statistic)).exp().max(PROB_FLOOR))
}

/// Settings of the parametric bootstrap fallback.
#[derive(Debug, Clone, Copy)]
pub struct Bootstrap {
    pub size: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Self { size: 999, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapPValue {
    pub p_value: f64,
    /// Smallest attainable p-value, `1/(valid + 1)`.
    pub lower_bound: f64,
    pub valid: usize,
    pub failed: usize,
    pub observed: f64,
}

/// `(1 + #{b : stat_b ≥ observed}) / (B + 1)`.
pub fn bootstrap_count_pvalue(observed: f64, replicates: &[f64]) -> f64 {
    let exceed = replicates.iter().filter(|&&s| s >= observed).count();
    (1 + exceed) as f64 / (replicates.len() + 1) as f64
}

/// Parametric bootstrap p-value: refit and recompute the statistic on
/// samples drawn from the fitted GPD.
pub fn bootstrap_pvalue(exceedances: &[f64], kind: StatKind, cfg: &Bootstrap) -> Result<BootstrapPValue> {
    let fit = fit_mle(exceedances)?;
    if !fit.converged {
        return Err(Error::Unavailable("fit did not converge".into()));
    }
    let z = pit_transform(exceedances, &fit.params);
    let observed = edf_statistic(kind, &z);
    bootstrap_from_fit(observed, &fit.params, exceedances.len(), kind, cfg)
}

pub(crate) fn bootstrap_from_fit(
    observed: f64,
    params: &GpdParams<f64>,
    n: usize,
    kind: StatKind,
    cfg: &Bootstrap,
) -> Result<BootstrapPValue> {
    if cfg.size == 0 {
        return Err(Error::Domain("bootstrap size must be positive".into()));
    }
    let params = GpdParams { threshold: 0.0, ..*params };
    let stats: Vec<Option<f64>> = (0..cfg.size)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, &[b as u64]);
            let mut sample = vec![0.0; n];
            params.fill(&mut rng, &mut sample);
            match fit_mle(&sample) {
                Ok(f) if f.converged => Some(edf_statistic(kind, &pit_transform(&sample, &f.params))),
                _ => None,
            }
        })
        .collect();
    let valid: Vec<f64> = stats.iter().flatten().copied().collect();
    let failed = cfg.size - valid.len();
    if failed as f64 > MAX_BOOTSTRAP_FAILURE * cfg.size as f64 {
        return Err(Error::Unavailable(format!("{failed} of {} bootstrap fits failed", cfg.size)));
    }
    Ok(BootstrapPValue {
        p_value: bootstrap_count_pvalue(observed, &valid),
        lower_bound: 1.0 / (valid.len() + 1) as f64,
        valid: valid.len(),
        failed,
        observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Synthetic table with exponential tails: `-ln p = q` exactly on row 0
    /// and `-ln p = q / 2` on row 1.
    fn synthetic() -> NullTable {
        let probs = default_probs();
        let row0: Vec<f64> = probs.iter().map(|p| -p.ln()).collect();
        let row1: Vec<f64> = row0.iter().map(|q| 2.0 * q).collect();
        NullTable {
            kind: StatKind::Ad,
            xi_grid: vec![0.2, 0.3],
            upper_tail_probs: probs,
            quantiles: vec![row0, row1],
            meta: TableMeta {
                replicates: 0,
                n: 0,
                seed: 0,
                failed: vec![0, 0],
                quantile_method: "type7".into(),
                built: None,
            },
        }
    }

    #[test]
    fn exact_hit_returns_column_probability() {
        let t = synthetic();
        let col = t.upper_tail_probs.iter().position(|&p| (p - 0.05).abs() < 1e-12).unwrap();
        let q = t.quantiles[1][col];
        let (p, path) = t.pvalue(q, 0.3).unwrap();
        assert_eq!(path, PValuePath::Interpolated);
        assert_relative_eq!(p, 0.05, max_relative = 1e-12);
    }

    #[test]
    fn log_linear_midpoint() {
        // Row with only two relevant columns: the midpoint in -ln p space.
        let probs = vec![0.5, 0.05, 0.025, 0.01];
        let row = vec![0.1, 1.0, 2.0, 3.0];
        let (p, path) = pvalue_in_row(1.5, &row, &probs).unwrap();
        assert_eq!(path, PValuePath::Interpolated);
        let want = (-(-(0.05f64).ln() - (0.025f64).ln()) / 2.0).exp();
        assert_relative_eq!(p, want, max_relative = 1e-12);
        assert_relative_eq!(p, 0.035_355_339, max_relative = 1e-8);
    }

    #[test]
    fn routing_below_and_above() {
        let t = synthetic();
        let (p, path) = t.pvalue(0.0, 0.25).unwrap();
        assert_eq!((p, path), (0.999, PValuePath::BelowTable));
        let top = *t.quantiles[0].last().unwrap();
        let (p, path) = t.pvalue(top * 1.5, 0.2).unwrap();
        assert_eq!(path, PValuePath::TailExtrapolated);
        assert!(p < 0.001);
        // exponential row: extrapolation is exact
        assert_relative_eq!(p, (-top * 1.5).exp(), max_relative = 1e-9);
    }

    #[test]
    fn shape_out_of_range() {
        let t = synthetic();
        assert!(matches!(t.pvalue(1.0, 0.5), Err(Error::OutOfTableRange { .. })));
    }

    #[test]
    fn linear_in_shape() {
        let t = synthetic();
        let row = t.row_at(0.25).unwrap();
        for (c, q) in row.iter().enumerate() {
            assert_relative_eq!(*q, 1.5 * t.quantiles[0][c], max_relative = 1e-12);
        }
    }

    #[test]
    fn boundary_continuity_and_doubling() {
        let t = synthetic();
        let row = &t.quantiles[0];
        let q = *row.last().unwrap();
        let extrap = tail_extrapolate(q, row, &t.upper_tail_probs).unwrap();
        assert!((extrap - 0.001).abs() / 0.001 < 0.1);
        let p2 = tail_extrapolate(2.0 * q, row, &t.upper_tail_probs).unwrap();
        let (a, b) = tail_line(row, &t.upper_tail_probs).unwrap();
        assert!(p2 < 0.001);
        assert!((-p2.ln() - (a + b * 2.0 * q)).abs() <= 0.1 * (a + b * 2.0 * q));
    }

    #[test]
    fn non_monotone_row_rejected() {
        let probs = default_probs();
        let mut row: Vec<f64> = probs.iter().map(|p| -p.ln()).collect();
        row.swap(990, 991);
        assert!(matches!(tail_extrapolate(10.0, &row, &probs), Err(Error::Table(_))));
    }

    #[test]
    fn bootstrap_counting_bounds() {
        let reps: Vec<f64> = (1..=999).map(|i| i as f64).collect();
        assert_eq!(bootstrap_count_pvalue(0.5, &reps), 1.0);
        assert_eq!(bootstrap_count_pvalue(1e6, &reps), 1.0 / 1000.0);
    }

    #[test]
    fn build_rejects_bad_grids() {
        let cfg = BuildConfig { probs: vec![0.01, 0.5, 0.9], ..BuildConfig::default() };
        assert!(matches!(build_table(StatKind::Ad, &cfg), Err(Error::Table(_))));
        let cfg = BuildConfig { xi_grid: vec![0.1, 0.1], ..BuildConfig::default() };
        assert!(build_table(StatKind::Ad, &cfg).is_err());
        let cfg = BuildConfig { replicates: 100, ..BuildConfig::default() };
        assert!(build_table(StatKind::Ad, &cfg).is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = synthetic();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = NullTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.kind, t.kind);
        assert_eq!(back.xi_grid, t.xi_grid);
        assert_eq!(back.upper_tail_probs, t.upper_tail_probs);
        for (a, b) in back.quantiles.iter().flatten().zip(t.quantiles.iter().flatten()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-8);
        }
    }

    #[test]
    fn loader_rejects_non_monotone_rows() {
        let mut t = synthetic();
        t.quantiles[0].swap(3, 4);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert!(NullTable::read_from(buf.as_slice()).is_err());
    }
}
