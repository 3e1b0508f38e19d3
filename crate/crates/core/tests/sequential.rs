use potsel::gof::{TestKind, TestOptions};
use potsel::gpd::{sample, GpdParams};
use potsel::null_dist::{type7_quantile, NullTable, StatKind};
use potsel::rng::derive_seed;
use potsel::sequential::{run_ladder, StoppingRule};
use rayon::prelude::*;

/// Nested exceedance sets make the ten p-values strongly dependent, and
/// StrongStop then rejects about 15% of null ladders at the 5% level.
#[test]
#[ignore = "fails: about 85% observed under dependent p-values"]
fn strong_stop_keeps_the_first_threshold_of_a_null_ladder() {
    let table = NullTable::bundled(StatKind::Ad).unwrap();
    let test = TestOptions::new(TestKind::Ad).with_table(&table);
    let params = GpdParams::new(1.0, 0.25).unwrap();
    let kept: usize = (0..500u64)
        .into_par_iter()
        .map(|r| {
            let mut data = sample(2000, &params, derive_seed(41, &[r])).unwrap();
            data.sort_by(f64::total_cmp);
            let thresholds: Vec<f64> = (1..=10).map(|i| type7_quantile(&data, 0.05 * i as f64)).collect();
            let out = run_ladder(&data, &thresholds, &test, StoppingRule::StrongStop, 0.05).unwrap();
            usize::from(out.decision.chosen == Some(0))
        })
        .sum();
    assert!(kept >= 450, "first threshold kept in {kept} of 500");
}
