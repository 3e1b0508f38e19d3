use potsel::estimation::{fit_mle, fit_mps, FitMethod};
use potsel::gpd::{sample, GpdParams};
use potsel::{Gpd, Gpd32};
use proptest::prelude::*;

proptest! {
    #[test]
    fn quantile_inverts_cdf(sigma in 0.01f64..100.0, xi in -0.9f64..2.0, p in 1e-9f64..0.999_999) {
        let d = Gpd::new(sigma, xi).unwrap();
        let y = d.quantile(p).unwrap();
        prop_assert!((d.cdf(y).unwrap() - p).abs() < 1e-10);
    }

    #[test]
    fn cdf_is_monotone(sigma in 0.1f64..10.0, xi in -0.9f64..1.5, a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let d = Gpd::new(sigma, xi).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(d.cdf_saturating(lo) <= d.cdf_saturating(hi));
    }

    #[test]
    fn single_precision_agrees(sigma in 0.5f32..5.0, xi in -0.4f32..0.8, p in 0.01f32..0.99) {
        let y32 = Gpd32::new(sigma, xi).unwrap().quantile(p).unwrap();
        let y64 = Gpd::new(sigma as f64, xi as f64).unwrap().quantile(p as f64).unwrap();
        prop_assert!(((y32 as f64) - y64).abs() <= 1e-4 * (1.0 + y64.abs()));
    }
}

#[test]
fn shape_zero_is_continuous() {
    let e = Gpd::new(2.0, 0.0).unwrap();
    for y in [0.0, 0.1, 1.0, 5.0, 20.0] {
        for xi in [1e-9, -1e-9] {
            let d = Gpd::new(2.0, xi).unwrap();
            assert!((d.cdf(y).unwrap() - e.cdf(y).unwrap()).abs() < 1e-6);
            assert!((d.logpdf(y) - e.logpdf(y)).abs() < 1e-6);
        }
    }
}

#[test]
fn fits_recover_parameters() {
    let truth = GpdParams::new(2.0, 0.25).unwrap();
    let y = sample(20_000, &truth, 99).unwrap();
    for fit in [fit_mle(&y).unwrap(), fit_mps(&y).unwrap()] {
        assert!(fit.converged);
        assert!((fit.params.scale - 2.0).abs() < 0.1, "{:?}", fit.params);
        assert!((fit.params.shape - 0.25).abs() < 0.04, "{:?}", fit.params);
    }
    let mle = fit_mle(&y).unwrap();
    assert_eq!(mle.method, FitMethod::Mle);
    let se = mle.se_shape().unwrap();
    assert!(se > 0.005 && se < 0.02, "{se}");
}

#[test]
fn bounded_tail_fit() {
    let truth = GpdParams::new(1.0, -0.3).unwrap();
    let y = sample(5000, &truth, 4).unwrap();
    let fit = fit_mle(&y).unwrap();
    assert!(fit.converged);
    assert!((fit.params.shape + 0.3).abs() < 0.06, "{:?}", fit.params);
    let max = y.iter().cloned().fold(0.0, f64::max);
    assert!(fit.params.upper_endpoint() >= max);
}

#[test]
fn degenerate_samples_are_rejected() {
    assert!(fit_mle(&[1.0]).is_err());
    assert!(!fit_mle(&[1.0; 20]).unwrap().converged);
    assert!(fit_mps(&[-1.0, 2.0, 3.0]).is_err());
}
