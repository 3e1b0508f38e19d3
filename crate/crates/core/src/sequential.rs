//! Ordered goodness-of-fit testing over a ladder of thresholds.
//!
//! For thresholds `u_1 < … < u_l` with p-values `p_1, …, p_l` each rule
//! returns a cutoff `k̂`: hypotheses `1..=k̂` are rejected and the selected
//! threshold is `u_{k̂+1}`. When `k̂ = l` every threshold is rejected and no
//! model is selected.
//!
//! * ForwardStop: `k̂ = max{k : -(1/k) Σ_{i≤k} ln(1 - p_i) ≤ α}`.
//! * StrongStop: `k̂ = max{k : exp(Σ_{j≥k} ln(p_j)/j) ≤ αk/l}`.
//! * Unadjusted: reject while `p_i ≤ α`, stop at the first acceptance.

use crate::error::{domain, Error, Result};
use crate::estimation::{fit_mle, FitMethod, FitResult};
use crate::gof::{run_test, TestOptions, TestResult};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

/// Fewest exceedances at which a threshold is tested.
pub const MIN_EXCEEDANCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoppingRule {
    ForwardStop,
    StrongStop,
    Unadjusted,
}

impl StoppingRule {
    pub const ALL: [StoppingRule; 3] = [StoppingRule::ForwardStop, StoppingRule::StrongStop, StoppingRule::Unadjusted];

    pub fn name(self) -> &'static str {
        match self {
            StoppingRule::ForwardStop => "forwardstop",
            StoppingRule::StrongStop => "strongstop",
            StoppingRule::Unadjusted => "unadjusted",
        }
    }

    pub fn apply<T: Scalar>(self, p: &[T], alpha: T) -> Result<StoppingDecision> {
        match self {
            StoppingRule::ForwardStop => forward_stop(p, alpha),
            StoppingRule::StrongStop => strong_stop(p, alpha),
            StoppingRule::Unadjusted => unadjusted_stop(p, alpha),
        }
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StoppingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "forwardstop" | "forward" => Ok(StoppingRule::ForwardStop),
            "strongstop" | "strong" => Ok(StoppingRule::StrongStop),
            "unadjusted" | "none" => Ok(StoppingRule::Unadjusted),
            other => Err(Error::Config(format!("unknown stopping rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingDecision {
    pub rule: StoppingRule,
    pub alpha: f64,
    /// Number of leading hypotheses rejected.
    pub k_hat: usize,
    /// Zero-based index of the selected threshold (equal to `k_hat`), absent
    /// when every threshold is rejected.
    pub chosen: Option<usize>,
    pub all_rejected: bool,
}

impl StoppingDecision {
    fn new(rule: StoppingRule, alpha: f64, k_hat: usize, l: usize) -> Self {
        let all_rejected = k_hat == l;
        Self { rule, alpha, k_hat, chosen: (!all_rejected).then_some(k_hat), all_rejected }
    }
}

fn validate<T: Scalar>(p: &[T], alpha: T) -> Result<()> {
    if p.is_empty() {
        return Err(domain("empty p-value sequence"));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(bad) = p.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(domain(format!("p-value {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Running ForwardStop statistics `-(1/k) Σ_{i≤k} ln(1 - p_i)`.
pub fn forward_stop_statistics<T: Scalar>(p: &[T]) -> Vec<T> {
    let guard = T::one() - T::lit(1e-16);
    let mut sum = T::zero();
    p.iter()
        .enumerate()
        .map(|(i, &pi)| {
            sum = sum + if pi >= guard { T::infinity() } else { -(-pi).ln_1p() };
            sum / T::from_count(i + 1)
        })
        .collect()
}

pub fn forward_stop<T: Scalar>(p: &[T], alpha: T) -> Result<StoppingDecision> {
    validate(p, alpha)?;
    let stats = forward_stop_statistics(p);
    let k_hat = stats.iter().rposition(|&s| s <= alpha).map_or(0, |i| i + 1);
    Ok(StoppingDecision::new(StoppingRule::ForwardStop, alpha.to_f64().unwrap_or(f64::NAN), k_hat, p.len()))
}

/// StrongStop statistics `exp(Σ_{j≥k} ln(p_j)/j)` for `k = 1..=l`.
pub fn strong_stop_statistics<T: Scalar>(p: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); p.len()];
    let mut sum = T::zero();
    for j in (0..p.len()).rev() {
        sum = sum + p[j].ln() / T::from_count(j + 1);
        out[j] = sum.exp();
    }
    out
}

pub fn strong_stop<T: Scalar>(p: &[T], alpha: T) -> Result<StoppingDecision> {
    validate(p, alpha)?;
    let l = p.len();
    let stats = strong_stop_statistics(p);
    let k_hat = (1..=l).rev().find(|&k| stats[k - 1] <= alpha * T::from_count(k) / T::from_count(l)).unwrap_or(0);
    Ok(StoppingDecision::new(StoppingRule::StrongStop, alpha.to_f64().unwrap_or(f64::NAN), k_hat, l))
}

pub fn unadjusted_stop<T: Scalar>(p: &[T], alpha: T) -> Result<StoppingDecision> {
    validate(p, alpha)?;
    let k_hat = p.iter().take_while(|&&v| v <= alpha).count();
    Ok(StoppingDecision::new(StoppingRule::Unadjusted, alpha.to_f64().unwrap_or(f64::NAN), k_hat, p.len()))
}

/// A tested threshold.
#[derive(Debug, Clone)]
pub struct LadderStep {
    pub threshold: f64,
    /// Position in the caller's candidate list.
    pub candidate: usize,
    pub n_exceed: usize,
    pub result: TestResult,
}

/// A candidate threshold left out of the ladder.
#[derive(Debug, Clone)]
pub struct SkippedThreshold {
    pub threshold: f64,
    pub candidate: usize,
    pub n_exceed: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ThresholdLadder {
    pub steps: Vec<LadderStep>,
    pub skipped: Vec<SkippedThreshold>,
}

impl ThresholdLadder {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.threshold).collect()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.result.p_value).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.n_exceed).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LadderOutcome {
    pub ladder: ThresholdLadder,
    pub decision: StoppingDecision,
    /// Maximum likelihood fit at the selected threshold, with
    /// `params.threshold` set to it; absent when all thresholds are rejected.
    pub fit: Option<FitResult>,
}

impl LadderOutcome {
    pub fn chosen_step(&self) -> Option<&LadderStep> {
        self.decision.chosen.map(|i| &self.ladder.steps[i])
    }

    /// The same ladder under another rule or level; `data` must be the
    /// series the ladder was built from.
    pub fn reselect(&self, data: &[f64], rule: StoppingRule, alpha: f64) -> Result<LadderOutcome> {
        let decision = rule.apply(&self.ladder.p_values(), alpha)?;
        let fit = selected_fit(data, &self.ladder, &decision)?;
        Ok(LadderOutcome { ladder: self.ladder.clone(), decision, fit })
    }
}

/// Excesses `x - u` of the observations strictly above `u`.
pub fn exceedances(data: &[f64], u: f64) -> Vec<f64> {
    data.iter().filter(|&&x| x > u).map(|&x| x - u).collect()
}

/// Removes repeated thresholds; errors when the candidates decrease.
pub fn dedup_thresholds(thresholds: &[f64]) -> Result<Vec<(usize, f64)>> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(thresholds.len());
    for (i, &u) in thresholds.iter().enumerate() {
        if !u.is_finite() {
            return Err(Error::Ladder(format!("threshold {u} is not finite")));
        }
        match out.last() {
            Some(&(_, prev)) if u < prev => {
                return Err(Error::Ladder(format!("thresholds decrease at position {i}: {prev} then {u}")))
            }
            Some(&(_, prev)) if u == prev => {}
            _ => out.push((i, u)),
        }
    }
    Ok(out)
}

/// Tests every candidate threshold and applies the stopping rule.
///
/// Thresholds with fewer than [`MIN_EXCEEDANCES`] exceedances, and those where
/// the test could not be computed, are dropped from the ladder and recorded in
/// [`ThresholdLadder::skipped`]. A bootstrap fallback gets its own seed per
/// candidate position, so results do not depend on scheduling.
pub fn run_ladder(
    data: &[f64],
    thresholds: &[f64],
    test: &TestOptions<'_>,
    rule: StoppingRule,
    alpha: f64,
) -> Result<LadderOutcome> {
    let ladder = build_ladder(data, thresholds, test)?;
    let decision = rule.apply(&ladder.p_values(), alpha)?;
    let fit = selected_fit(data, &ladder, &decision)?;
    Ok(LadderOutcome { ladder, decision, fit })
}

/// Runs the tests of [`run_ladder`] without applying a rule.
pub fn build_ladder(data: &[f64], thresholds: &[f64], test: &TestOptions<'_>) -> Result<ThresholdLadder> {
    let candidates = dedup_thresholds(thresholds)?;
    let results: Vec<(usize, f64, usize, Result<TestResult>)> = candidates
        .par_iter()
        .map(|&(i, u)| {
            let y = exceedances(data, u);
            let n = y.len();
            if n < MIN_EXCEEDANCES {
                return (i, u, n, Err(Error::InsufficientData { needed: MIN_EXCEEDANCES, got: n }));
            }
            let mut opts = *test;
            if let Some(b) = opts.bootstrap.as_mut() {
                b.seed = derive_seed(b.seed, &[i as u64]);
            }
            (i, u, n, run_test(&y, &opts))
        })
        .collect();
    let mut ladder = ThresholdLadder::default();
    for (candidate, threshold, n_exceed, r) in results {
        match r {
            Ok(result) => ladder.steps.push(LadderStep { threshold, candidate, n_exceed, result }),
            Err(e) => {
                log::debug!("threshold {threshold} skipped: {e}");
                ladder.skipped.push(SkippedThreshold { threshold, candidate, n_exceed, reason: e.to_string() })
            }
        }
    }
    if ladder.len() < 2 {
        return Err(Error::Ladder(format!("{} usable threshold(s), need at least 2", ladder.len())));
    }
    Ok(ladder)
}

/// Maximum likelihood fit at the chosen step, refitting when the test used
/// another estimator.
pub fn selected_fit(data: &[f64], ladder: &ThresholdLadder, decision: &StoppingDecision) -> Result<Option<FitResult>> {
    let Some(i) = decision.chosen else { return Ok(None) };
    let step = &ladder.steps[i];
    let mut fit = match step.result.fit.method {
        FitMethod::Mle => step.result.fit.clone(),
        FitMethod::Mps => fit_mle(&exceedances(data, step.threshold))?,
    };
    fit.params.threshold = step.threshold;
    Ok(Some(fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gof::TestKind;
    use crate::gpd::{sample, GpdParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn forward_stop_examples() {
        let d = forward_stop(&[0.0, 0.0, 0.0], 0.05).unwrap();
        assert_eq!((d.k_hat, d.chosen, d.all_rejected), (3, None, true));

        let p = [0.01, 0.01, 0.8];
        let s = forward_stop_statistics(&p);
        assert_relative_eq!(s[0], 0.010_050_335_853_501_44, epsilon = 1e-15);
        assert_relative_eq!(s[1], s[0], epsilon = 1e-15);
        assert_relative_eq!(s[2], 0.543_179_528_047_034_5, epsilon = 1e-12);
        let d = forward_stop(&p, 0.05).unwrap();
        assert_eq!((d.k_hat, d.chosen, d.all_rejected), (2, Some(2), false));

        let d = forward_stop(&[0.9], 0.05).unwrap();
        assert_eq!((d.k_hat, d.chosen), (0, Some(0)));
    }

    #[test]
    fn forward_stop_unit_p_is_infinite() {
        let s = forward_stop_statistics(&[0.0f64, 1.0, 0.0]);
        assert_eq!(s[0], 0.0);
        assert!(s[1].is_infinite() && s[2].is_infinite());
        assert_eq!(forward_stop(&[0.0, 1.0, 0.0], 0.05).unwrap().k_hat, 1);
    }

    #[test]
    fn strong_stop_examples() {
        let d = strong_stop(&[0.04], 0.05).unwrap();
        assert_eq!((d.k_hat, d.all_rejected), (1, true));

        let p = [0.001, 0.01, 0.9];
        let s = strong_stop_statistics(&p);
        assert_relative_eq!(s[0], 9.654_893_846_056_297e-5, max_relative = 1e-12);
        assert_relative_eq!(s[1], 0.096_548_938_460_562_97, max_relative = 1e-12);
        assert_relative_eq!(s[2], 0.965_489_384_605_629_7, max_relative = 1e-12);
        let d = strong_stop(&p, 0.1).unwrap();
        assert_eq!((d.k_hat, d.chosen), (1, Some(1)));

        assert_eq!(strong_stop(&[1.0, 1.0, 1.0], 0.3).unwrap().k_hat, 0);
    }

    #[test]
    fn strong_stop_zero_p() {
        // ln 0 = -∞ satisfies the criterion for every k up to that index
        assert_eq!(strong_stop(&[0.9, 0.9, 0.0, 0.9], 0.05).unwrap().k_hat, 3);
    }

    #[test]
    fn unadjusted_examples() {
        let d = unadjusted_stop(&[0.01, 0.2, 0.01], 0.05).unwrap();
        assert_eq!((d.k_hat, d.chosen), (1, Some(1)));
        assert_eq!(unadjusted_stop(&[0.5, 0.01], 0.05).unwrap().chosen, Some(0));
        assert!(unadjusted_stop(&[0.01, 0.02], 0.05).unwrap().all_rejected);
    }

    #[test]
    fn invalid_inputs() {
        for rule in StoppingRule::ALL {
            assert!(rule.apply::<f64>(&[], 0.05).is_err());
            assert!(rule.apply(&[0.5], 0.0).is_err());
            assert!(rule.apply(&[1.5], 0.05).is_err());
            assert!(rule.apply(&[f64::NAN], 0.05).is_err());
        }
    }

    #[test]
    fn single_precision_rules() {
        let d = strong_stop(&[0.001f32, 0.01, 0.9], 0.1).unwrap();
        assert_eq!(d.k_hat, 1);
        assert_eq!(forward_stop(&[0.01f32, 0.01, 0.8], 0.05).unwrap().k_hat, 2);
    }

    #[test]
    fn rule_names_round_trip() {
        for rule in StoppingRule::ALL {
            assert_eq!(rule.name().parse::<StoppingRule>().unwrap(), rule);
        }
        assert_eq!("Strong-Stop".parse::<StoppingRule>().unwrap(), StoppingRule::StrongStop);
    }

    #[test]
    fn dedup_and_ordering() {
        let d = dedup_thresholds(&[1.0, 1.0, 2.0, 3.0, 3.0]).unwrap();
        assert_eq!(d, vec![(0, 1.0), (2, 2.0), (3, 3.0)]);
        assert!(dedup_thresholds(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn ladder_skips_thin_thresholds_and_refits_moran() {
        let data = sample(300, &GpdParams::new(1.0, 0.1).unwrap(), 17).unwrap();
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        let thresholds = [0.0, 0.0, sorted[100], sorted[200], sorted[295]];
        let out =
            run_ladder(&data, &thresholds, &TestOptions::new(TestKind::Moran), StoppingRule::StrongStop, 0.05).unwrap();
        assert_eq!(out.ladder.len(), 3);
        assert_eq!(out.ladder.skipped.len(), 1);
        assert_eq!(out.ladder.counts(), vec![300, 199, 99]);
        let fit = out.fit.clone().unwrap();
        assert_eq!(fit.method, FitMethod::Mle);
        assert_eq!(fit.params.threshold, out.chosen_step().unwrap().threshold);
    }

    #[test]
    fn ladder_needs_two_usable_thresholds() {
        let data = sample(50, &GpdParams::new(1.0, 0.1).unwrap(), 2).unwrap();
        let r = run_ladder(&data, &[0.0, 1e9], &TestOptions::new(TestKind::Moran), StoppingRule::ForwardStop, 0.05);
        assert!(matches!(r, Err(Error::Ladder(_))));
    }

    fn p_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 1..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn raising_one_p_never_adds_rejections(p in p_vec(), idx in any::<prop::sample::Index>(), t in 0.0f64..=1.0, alpha in 0.001f64..0.5) {
            let i = idx.index(p.len());
            let mut q = p.clone();
            q[i] = p[i] + t * (1.0 - p[i]);
            prop_assert!(forward_stop(&q, alpha).unwrap().k_hat <= forward_stop(&p, alpha).unwrap().k_hat);
            prop_assert!(strong_stop(&q, alpha).unwrap().k_hat <= strong_stop(&p, alpha).unwrap().k_hat);
            prop_assert!(unadjusted_stop(&q, alpha).unwrap().k_hat <= unadjusted_stop(&p, alpha).unwrap().k_hat);
        }

        #[test]
        fn decision_invariants(p in p_vec(), alpha in 0.001f64..0.5) {
            for rule in StoppingRule::ALL {
                let d = rule.apply(&p, alpha).unwrap();
                prop_assert!(d.k_hat <= p.len());
                prop_assert_eq!(d.chosen.is_none(), d.all_rejected);
                prop_assert_eq!(d.all_rejected, d.k_hat == p.len());
            }
        }
    }
}
