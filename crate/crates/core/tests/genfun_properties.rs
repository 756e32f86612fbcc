use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;
use starnet_core::genfun::*;
use starnet_core::limit_ode::series_seed;
use starnet_core::{solve_mean_field, Precision, SolverOptions, SystemParams};

fn xi_at(rho: f64) -> (ScaledSeries, XiReport) {
    let mut s = auto_coefficients(rho, Precision::Standard).unwrap();
    let r = find_xi(&mut s).unwrap();
    (s, r)
}

/// Smallest positive zero of the plain truncated series, by scanning and bisection.
fn series_zero(s: &ScaledSeries) -> f64 {
    let f = |x: f64| s.eval_series(x).unwrap().0;
    let mut a = 0.0;
    let step = 1e-3;
    while f(a + step) > 0.0 {
        a += step;
    }
    let mut b = a + step;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m
        } else {
            b = m
        }
    }
    0.5 * (a + b)
}

#[test]
fn anchoring_zero_matches_plain_series_where_certified() {
    for rho in [0.3, 0.5, 0.7] {
        let plain = scaled_coefficients(rho, 200, Precision::Standard).unwrap();
        let (_, r) = xi_at(rho);
        assert!(r.xi < plain.certified_radius(1e-14));
        let z = series_zero(&plain);
        // Cancellation in the plain sum limits this oracle near z = 10.
        assert!((z / r.xi - 1.0).abs() < 1e-9, "rho={rho}: {z} vs {}", r.xi);
    }
}

#[test]
fn reference_anchoring_zeros() {
    for (rho, want) in [(0.3, 3.390852384059), (0.5, 3.963737192022), (0.9, 1494.500509615)] {
        let (_, r) = xi_at(rho);
        assert!((r.xi / want - 1.0).abs() < 1e-10, "rho={rho}: {}", r.xi);
    }
}

#[test]
fn xi_agrees_with_mean_field_definition() {
    for rho in [0.2, 0.6, 0.8] {
        let (s, r) = xi_at(rho);
        let d = solve_mean_field(&SystemParams::from_load(rho).unwrap(), &SolverOptions::default()).unwrap();
        let (cal, rec) = calibrate_alpha(&s, &d).unwrap();
        assert!((rec.xi_definitional / r.xi - 1.0).abs() < 1e-9, "rho={rho}");
        assert!((b_at_one(&cal).unwrap() / d.alpha_bar - 1.0).abs() < 1e-9);
        assert!(coefficient_identity_residual(&cal, d.alpha_bar, 20) < 1e-9);
    }
}

#[test]
fn coefficients_approach_the_limit_series() {
    let gamma = series_seed(8).unwrap().gamma_f64();
    let gap = |rho: f64| {
        let s = scaled_coefficients(rho, 8, Precision::extended()).unwrap();
        (1..=6).map(|k| (s.c[k - 1] - gamma[k - 1]).abs()).fold(0.0, f64::max)
    };
    let (g3, g4) = (gap(0.999), gap(0.9999));
    assert!(g3 < 1e-3 && g4 < 1e-4, "{g3} {g4}");
    // The gap is first order in 1 - rho.
    assert!((g3 / 1e-3 - g4 / 1e-4).abs() < 0.01 * g4 / 1e-4);
}

#[test]
fn xi_increases_with_load() {
    let xs: Vec<f64> = [0.3, 0.5, 0.7, 0.8, 0.9].iter().map(|&r| xi_at(r).1.xi).collect();
    assert!(xs.windows(2).all(|w| w[0] < w[1]), "{xs:?}");
}

#[test]
fn xi_dips_at_light_load() {
    let (a, b) = (xi_at(0.2).1.xi, xi_at(0.3).1.xi);
    assert!(a > b, "{a} {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coefficients_alternate(rho in 0.05f64..0.95) {
        let s = scaled_coefficients(rho, 60, Precision::Standard).unwrap();
        prop_assert_eq!(s.first_non_alternation(), None);
        prop_assert_eq!(s.c[0], 1.0);
    }

    #[test]
    fn exact_skeleton_is_positive(p in 1u32..40, q in 2u32..41) {
        prop_assume!(p < q);
        let rho = BigRational::new(BigInt::from(p), BigInt::from(q));
        let r = rational_skeleton(&rho, 25).unwrap();
        prop_assert!(r.iter().all(|x| x.is_positive()));
        let s = scaled_coefficients(p as f64 / q as f64, 25, Precision::Standard).unwrap();
        prop_assert!(rational_float_gap(&s, &rho, 25).unwrap() < 1e-11);
    }

    #[test]
    fn functional_relation_inside_disk(rho in 0.2f64..0.8, re in -1.0f64..1.0, im in -1.0f64..1.0) {
        let s = scaled_coefficients(rho, 80, Precision::Standard).unwrap();
        let z = Complex64::new(re, im);
        let f = functional_residual(&s, z, 200).unwrap();
        prop_assert!(f.residual <= f.truncation_bound + 1e-12, "{:?}", f);
    }
}
