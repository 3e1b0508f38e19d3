use clap::{Args, Parser, Subcommand, ValueEnum};
use potsel::batch::{read_station_file, results_csv, run_batch, run_site, BatchConfig, SiteStatus};
use potsel::gof::{TestKind, TestOptions};
use potsel::null_dist::{build_tables, default_probs, default_xi_grid, BuildConfig, NullTable, StatKind};
use potsel::sequential::StoppingRule;
use potsel::simstudy::{fwer_null_study, misspec_study, power_study, FwerConfig, MisspecConfig, PowerConfig, Scenario};
use potsel::station::StationSeries;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_PARTIAL: u8 = 1;
const EXIT_FATAL: u8 = 2;

#[derive(Parser)]
#[command(name = "potsel", version, about = "Automated threshold selection for peaks-over-threshold models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate null tables for the Anderson-Darling and Cramer-von Mises tests
    BuildTable(BuildTableArgs),
    /// Select a threshold for a single series
    Select(SelectArgs),
    /// Process every station file in a directory
    Batch(BatchArgs),
    /// Run a simulation study
    Simulate(SimulateArgs),
}

/// Flags shared by `select` and `batch`; they override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// key = value settings file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Null table file, or a directory holding ad.txt and cvm.txt
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated return periods in years
    #[arg(long)]
    periods: Option<String>,
    /// delta or profile
    #[arg(long)]
    ci: Option<String>,
}

impl Common {
    fn resolve(&self) -> potsel::Result<BatchConfig> {
        let mut cfg = match &self.config {
            Some(p) => BatchConfig::from_file(p)?,
            None => BatchConfig::default(),
        };
        let flags: [(&str, Option<String>); 8] = [
            ("test", self.test.clone()),
            ("rule", self.rule.clone()),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("table", self.table.as_ref().map(|p| p.display().to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("periods", self.periods.clone()),
            ("ci", self.ci.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.site.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BuildTableArgs {
    /// Directory receiving ad.txt and cvm.txt
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// ad, cvm or both
    #[arg(long, default_value = "both")]
    test: String,
    #[arg(long, default_value_t = 100_000)]
    replicates: usize,
    /// Sample size of each simulated statistic
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 20_160_101)]
    seed: u64,
    /// Comma-separated shape grid (default -0.5 to 1.0 by 0.1)
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    /// .dly, .csv, or a text file of whitespace-separated values
    input: PathBuf,
    /// Station to use when the file holds several
    #[arg(long)]
    station: Option<String>,
    /// Skip the record-length and season screen
    #[arg(long)]
    no_screen: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BatchArgs {
    /// Directory of .dly and .csv station files
    input: PathBuf,
    /// Results CSV
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Power,
    Fwer,
    Misspec,
}

#[derive(Args)]
struct SimulateArgs {
    study: Study,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 2016)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Test used by the ladder studies; the power study runs all four
    #[arg(long, default_value = "ad")]
    test: String,
    /// Stopping rule reported first in the summary
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Directory receiving the CSV reports
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn stat_kind(test: TestKind) -> Option<StatKind> {
    match test {
        TestKind::Ad => Some(StatKind::Ad),
        TestKind::Cvm => Some(StatKind::Cvm),
        TestKind::Moran | TestKind::Score => None,
    }
}

/// Table for an EDF test: a file, a directory of tables, or the bundled one.
fn load_table(test: TestKind, path: Option<&Path>) -> potsel::Result<Option<NullTable>> {
    let Some(kind) = stat_kind(test) else { return Ok(None) };
    let table = match path {
        None => NullTable::bundled(kind)?,
        Some(p) => {
            let file = if p.is_dir() { p.join(format!("{}.txt", kind.name().to_lowercase())) } else { p.to_path_buf() };
            let table = NullTable::read_from(BufReader::new(fs::File::open(&file)?))?;
            if table.kind != kind {
                return Err(potsel::Error::Config(format!("{} holds a {} table", file.display(), table.kind)));
            }
            table
        }
    };
    Ok(Some(table))
}

fn init_pool(workers: Option<usize>) {
    if let Some(w) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            log::warn!("worker pool: {e}");
        }
    }
}

fn build_table_cmd(a: &BuildTableArgs) -> potsel::Result<u8> {
    init_pool(a.workers);
    let kinds = match a.test.to_ascii_lowercase().as_str() {
        "both" | "all" => vec![StatKind::Ad, StatKind::Cvm],
        t => vec![t.parse()?],
    };
    let xi_grid = match &a.xi {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| potsel::Error::Config(format!("bad shape {v:?}"))))
            .collect::<potsel::Result<_>>()?,
        None => default_xi_grid(),
    };
    let cfg = BuildConfig { xi_grid, probs: default_probs(), replicates: a.replicates, n: a.n, seed: a.seed };
    fs::create_dir_all(&a.out)?;
    let started = std::time::Instant::now();
    let tables = build_tables(&kinds, &cfg)?;
    let elapsed = started.elapsed().as_secs_f64();
    for mut table in tables {
        table.meta.built = Some(format!("{elapsed:.0} s"));
        let path = a.out.join(format!("{}.txt", table.kind.name().to_lowercase()));
        table.write_to(fs::File::create(&path)?)?;
        let failed: usize = table.meta.failed.iter().sum();
        println!("{}: {} rows, {failed} failed fits", path.display(), table.xi_grid.len());
    }
    Ok(0)
}

fn read_values(path: &Path) -> potsel::Result<Vec<f64>> {
    fs::read_to_string(path)?
        .split_whitespace()
        .enumerate()
        .map(|(i, t)| t.parse().map_err(|_| potsel::Error::Parse { line: 0, msg: format!("token {}: {t:?}", i + 1) }))
        .collect()
}

fn select_cmd(a: &SelectArgs) -> potsel::Result<u8> {
    let cfg = a.common.resolve()?;
    init_pool(Some(cfg.workers).filter(|&w| w > 0));
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let mut series = if ext == "dly" || ext == "csv" {
        let mut all = read_station_file(&a.input)?;
        match &a.station {
            Some(id) => all
                .into_iter()
                .find(|s| &s.station_id == id)
                .ok_or_else(|| potsel::Error::Config(format!("station {id} not in {}", a.input.display())))?,
            None if all.len() == 1 => all.remove(0),
            None => {
                return Err(potsel::Error::Config(format!("{} stations in file; pick one with --station", all.len())))
            }
        }
    } else {
        let name = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("series").to_string();
        StationSeries::from_values(name, &read_values(&a.input)?)?
    };
    if a.no_screen {
        series.season_filtered = true;
    }
    let table = load_table(cfg.site.test, cfg.table.as_deref())?;
    let r = run_site(&series, &cfg.site, table.as_ref());

    println!("station {}: {} observations, status {}", r.station_id, r.n_obs, r.status);
    if let Some(m) = &r.message {
        println!("  {m}");
    }
    if let Some(ladder) = &r.ladder {
        println!("{:>10} {:>12} {:>8} {:>12} {:>10}", "percentile", "threshold", "n_exceed", "statistic", "p_value");
        for s in &ladder.steps {
            println!(
                "{:>10} {:>12.4} {:>8} {:>12.5} {:>10.4}",
                r.rungs[s.candidate].percentile, s.threshold, s.n_exceed, s.result.statistic, s.result.p_value
            );
        }
        for s in &ladder.skipped {
            println!("  skipped {:.4}: {}", s.threshold, s.reason);
        }
        for rule in StoppingRule::ALL {
            match (r.decision(rule), r.percentile_for(rule)) {
                (Some(d), Some(p)) => println!("{rule:>12}: {} rejected, percentile {p}", d.k_hat),
                (Some(d), None) => println!("{rule:>12}: {} rejected, none retained", d.k_hat),
                _ => {}
            }
        }
    }
    if let (Some(fit), Some(c)) = (&r.fit, r.chosen) {
        println!(
            "threshold {:.4} (percentile {}), sigma {:.4}, xi {:.4}, zeta {:.5}",
            c.threshold,
            c.percentile,
            fit.params.scale,
            fit.params.shape,
            r.rate.map_or(f64::NAN, |z| z.zeta)
        );
        for (p, rl) in cfg.site.periods.iter().zip(&r.return_levels) {
            match rl {
                Some(e) => println!("  {p}-year level {:.3} [{:.3}, {:.3}]", e.estimate, e.ci_low, e.ci_high),
                None => println!("  {p}-year level unavailable"),
            }
        }
    }
    if let Some(theta) = r.theta {
        println!("extremal index {theta:.4}");
    }
    Ok(if r.status == SiteStatus::Ok { 0 } else { EXIT_PARTIAL })
}

fn batch_cmd(a: &BatchArgs) -> potsel::Result<u8> {
    let cfg = a.common.resolve()?;
    let table = load_table(cfg.site.test, cfg.table.as_deref())?;
    let report = run_batch(&a.input, &cfg, table.as_ref())?;
    fs::write(&a.output, results_csv(&report.results, &report.periods))?;
    eprint!("{}", report.summary());
    Ok(report.exit_code() as u8)
}

fn simulate_cmd(a: &SimulateArgs) -> potsel::Result<u8> {
    init_pool(a.workers);
    fs::create_dir_all(&a.out)?;
    let write = |name: &str, body: String| -> potsel::Result<()> {
        fs::write(a.out.join(name), body)?;
        Ok(())
    };
    let test: TestKind = a.test.parse()?;
    match a.study {
        Study::Power => {
            let ad = load_table(TestKind::Ad, a.table.as_deref())?.expect("edf table");
            let cvm = load_table(TestKind::Cvm, a.table.as_deref())?.expect("edf table");
            let tests = [
                TestOptions::new(TestKind::Score),
                TestOptions::new(TestKind::Moran),
                TestOptions::new(TestKind::Ad).with_table(&ad),
                TestOptions::new(TestKind::Cvm).with_table(&cvm),
            ];
            let scenarios = Scenario::grid(&[50, 100, 200, 400], a.replicates.unwrap_or(2000), a.seed);
            let report = power_study(&scenarios, &tests, &PowerConfig { alpha: a.alpha })?;
            write("power.csv", report.to_csv())?;
            print!("{}", report.summary());
        }
        Study::Fwer => {
            let table = load_table(test, a.table.as_deref())?;
            let mut opts = TestOptions::new(test);
            opts.table = table.as_ref();
            let mut cfg = FwerConfig { seed: a.seed, ..Default::default() };
            if let Some(r) = a.replicates {
                cfg.replicates = r;
            }
            let report = fwer_null_study(&cfg, &opts)?;
            write("fwer.csv", report.to_csv())?;
            print!("{}", report.summary());
        }
        Study::Misspec => {
            let table = load_table(test, a.table.as_deref())?;
            let mut opts = TestOptions::new(test);
            opts.table = table.as_ref();
            let mut cfg = MisspecConfig { seed: a.seed, alpha: a.alpha, ..Default::default() };
            if let Some(r) = a.replicates {
                cfg.replicates = r;
            }
            let report = misspec_study(&cfg, &opts)?;
            write("misspec_khat.csv", report.frequencies_csv())?;
            write("misspec_curves.csv", report.curves_csv())?;
            write("misspec_parameters.csv", report.parameters_csv())?;
            print!("{}", report.summary());
            if let Some(rule) = &a.rule {
                let rule: StoppingRule = rule.parse()?;
                println!("median k_hat under {rule}: {}", report.median_k_hat(rule));
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildTable(a) => build_table_cmd(a),
        Command::Select(a) => select_cmd(a),
        Command::Batch(a) => batch_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
