//! Goodness-of-fit tests for the GPD at a single threshold.
//!
//! * Anderson–Darling and Cramér–von Mises on the probability integral
//!   transform of the MLE fit, with p-values from a [`NullTable`]
//!   (or a parametric bootstrap outside the table's shape range);
//! * Moran's test built on the maximum product of spacings fit;
//! * a score test of constant shape against a piecewise-constant shape.
//!
//! [`NullTable`]: crate::null_dist::NullTable

mod edf;
mod moran;
mod score;

pub use edf::{ad_statistic, ad_test, cvm_statistic, cvm_test, edf_statistic, edf_test, pit_transform, PitSample};
pub use moran::{moran_constants, moran_test, MoranConstants};
pub use score::{decile_thresholds, piecewise_log_likelihood, score_test, DEFAULT_SCORE_INTERVALS};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::null_dist::{Bootstrap, NullTable};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    Ad,
    Cvm,
    Moran,
    Score,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [TestKind::Score, TestKind::Moran, TestKind::Ad, TestKind::Cvm];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::Ad => "ad",
            TestKind::Cvm => "cvm",
            TestKind::Moran => "moran",
            TestKind::Score => "score",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ad" | "anderson-darling" => Ok(TestKind::Ad),
            "cvm" | "cramer-von-mises" => Ok(TestKind::Cvm),
            "moran" => Ok(TestKind::Moran),
            "score" | "rao" => Ok(TestKind::Score),
            other => Err(Error::Config(format!("unknown test '{other}'"))),
        }
    }
}

/// How a p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValuePath {
    /// Log-linear interpolation inside the null table.
    Interpolated,
    /// Exponential-tail extrapolation beyond the table's smallest probability.
    TailExtrapolated,
    /// Statistic below the table's first column; p clamped to that column.
    BelowTable,
    /// Parametric bootstrap; the p-value is bounded below by `1/(B+1)`.
    Bootstrap { size: usize },
    /// Upper tail of a chi-square reference distribution.
    ChiSquare,
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub fit: FitResult,
    pub n: usize,
    /// Degrees of freedom of the chi-square reference (Moran: n, score: k).
    pub dof: Option<usize>,
    pub path: PValuePath,
    /// Some probability integral transform value was clamped into the open unit interval.
    pub clamped: bool,
}

/// Everything needed to run any of the four tests.
#[derive(Debug, Clone, Copy)]
pub struct TestOptions<'a> {
    pub kind: TestKind,
    /// Null table for AD/CVM; must match the statistic.
    pub table: Option<&'a NullTable>,
    /// Bootstrap used by AD/CVM when the fitted shape is off the table.
    pub bootstrap: Option<Bootstrap>,
    /// Internal thresholds of the score test.
    pub score_intervals: usize,
}

impl<'a> TestOptions<'a> {
    pub fn new(kind: TestKind) -> Self {
        Self { kind, table: None, bootstrap: None, score_intervals: DEFAULT_SCORE_INTERVALS }
    }

    pub fn with_table(mut self, table: &'a NullTable) -> Self {
        self.table = Some(table);
        self
    }

    pub fn with_bootstrap(mut self, bootstrap: Bootstrap) -> Self {
        self.bootstrap = Some(bootstrap);
        self
    }
}

/// Runs the configured test on exceedances over a zero threshold.
pub fn run_test(exceedances: &[f64], opts: &TestOptions<'_>) -> Result<TestResult> {
    let table = || opts.table.ok_or_else(|| Error::Config(format!("the {} test needs a null table", opts.kind)));
    match opts.kind {
        TestKind::Ad => ad_test(exceedances, table()?, opts.bootstrap.as_ref()),
        TestKind::Cvm => cvm_test(exceedances, table()?, opts.bootstrap.as_ref()),
        TestKind::Moran => moran_test(exceedances),
        TestKind::Score => score_test(exceedances, opts.score_intervals),
    }
}
