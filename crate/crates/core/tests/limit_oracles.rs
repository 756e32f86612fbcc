use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use starnet_core::limit_ode::*;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Coefficients of `z c'(z) + c(z) v(z)` and `(z d/dz)^2 v(z) - z c(z)` up to `z^n`.
fn substitution_defects(c: &[BigRational], v: &[BigRational], n: usize) -> (Vec<BigRational>, Vec<BigRational>) {
    let at = |s: &[BigRational], k: usize| s.get(k).cloned().unwrap_or_else(BigRational::zero);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for k in 0..=n {
        let kk = BigRational::from_integer(BigInt::from(k));
        let mut conv = BigRational::zero();
        for i in 0..=k {
            conv += at(c, i) * at(v, k - i);
        }
        first.push(&kk * at(c, k) + conv);
        let zc = if k == 0 { BigRational::zero() } else { at(c, k - 1) };
        second.push(&kk * &kk * at(v, k) - zc);
    }
    (first, second)
}

#[test]
fn seed_satisfies_the_equations_by_substitution() {
    let s = series_seed(20).unwrap();
    let (a, b) = substitution_defects(&s.gamma, &s.v, 19);
    assert!(a.iter().all(Zero::is_zero));
    assert!(b.iter().all(Zero::is_zero));
}

#[test]
fn seed_low_coefficients_exact() {
    let s = series_seed(6).unwrap();
    assert_eq!(s.gamma[1], q(-1, 1));
    assert_eq!(s.gamma[2], q(5, 8));
    assert_eq!(s.gamma[3], q(-17, 54));
    assert_eq!(s.v[2], q(-1, 4));
    assert_eq!(s.v[3], q(5, 72));
}

fn solution() -> LimitSolution {
    solve_limit_system(&LimitOptions::default()).unwrap()
}

#[test]
fn constant_a_and_its_two_estimates() {
    let s = solution();
    assert!((1.25..=1.35).contains(&s.a), "A = {}", s.a);
    assert!((s.a - 1.303892993288).abs() < 1e-9);
    assert!(s.a_rel_gap < 1e-10);
    assert!(s.conservation < 1e-8);
}

#[test]
fn blasius_and_integral_form() {
    let s = solution();
    let ys: Vec<f64> = (0..=60).map(|i| -2.0 + 0.1 * i as f64).collect();
    let r = blasius_residual(&s, &ys).unwrap();
    assert!(r.chain_rule < 1e-8, "{r:?}");
    assert!(r.finite_difference < 1e-4, "{r:?}");
    // With the opposite shift the residual is 2 e^y c, far from zero.
    let wrong = shifted_blasius_residual(&s, &ys, 1.0).unwrap();
    assert!(wrong.chain_rule > 0.5);
    assert!(integral_form_residual(&s, &[0.01, 0.1, 1.0, 10.0, 100.0]).unwrap() < 1e-6);
}

#[test]
fn profile_is_positive_and_decreasing() {
    let s = solution();
    assert!(s.c_vals.iter().all(|c| *c > 0.0));
    assert!(s.c_vals.windows(2).all(|w| w[1] < w[0]));
    assert!(s.v_vals.windows(2).all(|w| w[1] > w[0]));
    for z in [1e-4, 1e-2, 1.0, 50.0] {
        assert!(s.c(z).unwrap() > 0.0);
    }
}

#[test]
fn tail_fit_coefficients_are_consistent() {
    let s = solution();
    assert!((s.tail.half_a - s.a / 2.0).abs() < 1e-3 * s.a);
    assert!((s.tail.a_v - s.a).abs() < 1e-3 * s.a);
    assert!((s.tail.b + s.tail.b_v).abs() < 1e-3);
    assert!((s.tail.b_v + s.dcds).abs() < 1e-6);
}

#[test]
fn mellin_moments_stable_under_refinement() {
    let s = solution();
    let m = mellin_moments(&s).unwrap();
    let r = mellin_moments_refined(&s, 64).unwrap();
    assert!((m.cstar1 - r.cstar1).abs() < 1e-10);
    assert!((m.dcds1 - r.dcds1).abs() < 1e-10);
    assert!(m.cstar1_err < 1e-8 && m.dcds1_err < 1e-8);
}

#[test]
fn larger_horizon_and_order_agree() {
    let a = solution();
    let b = solve_limit_system(&LimitOptions {
        z_max: 1e7,
        order: 30,
        ..LimitOptions::default()
    })
    .unwrap();
    assert!((a.a - b.a).abs() < 1e-10);
    assert!((a.dcds - b.dcds).abs() < 1e-9);
}
