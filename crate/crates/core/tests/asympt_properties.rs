use proptest::prelude::*;
use starnet_core::asympt::*;
use starnet_core::limit_ode::MellinData;

fn mellin(cstar1: f64, dcds1: f64) -> MellinData {
    MellinData {
        cstar1,
        dcds1,
        cstar1_err: 0.0,
        dcds1_err: 0.0,
    }
}

#[test]
fn unit_log_load_gives_reciprocal_a() {
    let m = mellin(1.3, -0.2);
    let p = predict_alpha_prime((-1.0f64).exp(), &m).unwrap();
    assert!((p - 1.0 / 1.3).abs() < 1e-14);
}

#[test]
fn rejects_loads_outside_unit_interval() {
    let m = mellin(1.3, -0.2);
    assert!(predict_xi(1.0, &m).is_err());
    assert!(predict_alpha_prime(0.0, &m).is_err());
}

#[test]
fn three_row_report_with_extrapolated_k() {
    let m = mellin(1.303892993288, -0.2121628207);
    let opts = ReportOptions {
        b_fit_loads: vec![0.9, 0.95],
        ..ReportOptions::default()
    };
    let r = build_report(&[0.9, 0.95, 0.98], &m, &opts).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.failures.is_empty());
    for row in &r.rows {
        assert!(row.ratios.alpha_bar.is_finite() && row.ratios.xi.is_finite());
    }
    // Calibrated on the two lighter loads, the prediction at 0.98 is within a factor 2.
    let k = r.rows[2].ratios.k_rho.unwrap();
    assert!((0.5..2.0).contains(&k), "{k}");
    assert_eq!(r.csv_records()[0].len(), CSV_COLUMNS.len());
}

proptest! {
    #[test]
    fn only_mellin_inputs_matter(rho in 0.01f64..0.999, a in 0.5f64..3.0, d in -1.0f64..1.0) {
        let m = mellin(a, d);
        let l = rho.ln();
        let p = predict_alpha_prime(rho, &m).unwrap();
        prop_assert!((p * l * l * a - 1.0).abs() < 1e-12);
        let x = predict_ln_rho_xi(rho, &m).unwrap();
        prop_assert!((x - (-1.0 / (l * a) - d / a)).abs() < 1e-9 * x.abs().max(1.0));
        prop_assert!((predict_xi(rho, &m).unwrap().ln() - (x - rho.ln())).abs() < 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn log_and_linear_scales_merge(rho in 0.99f64..0.99999) {
        let l = rho.ln();
        let ratio = (l * l) / ((1.0 - rho) * (1.0 - rho));
        prop_assert!((ratio - 1.0).abs() <= 1.01 * (1.0 - rho));
        let m = mellin(1.3, -0.2);
        let a = predict_alpha_prime(rho, &m).unwrap();
        let b = predict_alpha_bar_linear(rho, &m).unwrap();
        prop_assert!((a / b - 1.0).abs() <= 1.01 * (1.0 - rho));
    }
}
