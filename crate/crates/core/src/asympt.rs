//! Heavy-traffic predictions from the two Mellin moments of the limit
//! function, compared with exact finite-load values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorClass, Result};
use crate::genfun::{auto_coefficients, find_xi};
use crate::limit_ode::MellinData;
use crate::meanfield::{solve_mean_field, SolverOptions, SystemParams};
use crate::precision::Precision;

fn check_load(rho: f64) -> Result<f64> {
    if rho > 0.0 && rho < 1.0 {
        Ok(rho.ln())
    } else {
        Err(Error::InvalidInput(format!("load rho = {rho} must lie in (0, 1)")))
    }
}

/// `alpha'(1, rho) ~ 1 / (ln^2 rho * c*(1))`.
pub fn predict_alpha_prime(rho: f64, mellin: &MellinData) -> Result<f64> {
    let l = check_load(rho)?;
    Ok(1.0 / (l * l * mellin.cstar1))
}

/// `alpha_bar ~ 1 / ((1 - rho)^2 A)`.
pub fn predict_alpha_bar_linear(rho: f64, mellin: &MellinData) -> Result<f64> {
    check_load(rho)?;
    Ok(1.0 / ((1.0 - rho).powi(2) * mellin.cstar1))
}

/// `ln(rho xi) ~ -1/(ln rho * c*) - (dc*/ds)/c*`.
pub fn predict_ln_rho_xi(rho: f64, mellin: &MellinData) -> Result<f64> {
    let l = check_load(rho)?;
    Ok(-1.0 / (l * mellin.cstar1) - mellin.dcds1 / mellin.cstar1)
}

pub fn predict_xi(rho: f64, mellin: &MellinData) -> Result<f64> {
    Ok(predict_ln_rho_xi(rho, mellin)?.exp() / rho)
}

/// `K(rho) ~ (1 - rho) B exp(1/((1 - rho) A))`.
pub fn predict_tail_constant(rho: f64, mellin: &MellinData, b_fit: f64) -> Result<f64> {
    Ok(predict_ln_tail_constant(rho, mellin, b_fit)?.exp())
}

pub fn predict_ln_tail_constant(rho: f64, mellin: &MellinData, b_fit: f64) -> Result<f64> {
    check_load(rho)?;
    if !(b_fit > 0.0) {
        return Err(Error::InvalidInput(format!("B = {b_fit} must be positive")));
    }
    Ok((1.0 - rho).ln() + b_fit.ln() + 1.0 / ((1.0 - rho) * mellin.cstar1))
}

/// Least-squares `B` in logarithms from exact `(rho, ln K)` pairs.
pub fn fit_b(points: &[(f64, f64)], mellin: &MellinData) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("B fit needs at least one load".into()));
    }
    let mut s = 0.0;
    for &(rho, ln_k) in points {
        check_load(rho)?;
        s += ln_k - (1.0 - rho).ln() - 1.0 / ((1.0 - rho) * mellin.cstar1);
    }
    Ok((s / points.len() as f64).exp())
}

/// Factor by which the tail-constant prediction moves when `A` is scaled by `1 + rel`.
pub fn tail_constant_sensitivity(rho: f64, mellin: &MellinData, rel: f64) -> Result<f64> {
    check_load(rho)?;
    let a = mellin.cstar1;
    Ok((1.0 / ((1.0 - rho) * a * (1.0 + rel)) - 1.0 / ((1.0 - rho) * a)).exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactRecord {
    pub alpha_bar: f64,
    pub xi: f64,
    pub ln_rho_xi: f64,
    pub k_rho: f64,
    pub ln_k_rho: f64,
    /// `alpha'(1)` after the identity check.
    pub alpha_prime: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictedRecord {
    pub alpha_prime: f64,
    pub alpha_bar_linear: f64,
    pub xi: f64,
    pub ln_rho_xi: f64,
    pub k_rho: Option<f64>,
    pub ln_k_rho: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ratios {
    /// exact / predicted, that is `alpha'(1) ln^2 rho * A`.
    pub alpha_bar: f64,
    pub xi: f64,
    /// `|ln(rho xi)_exact - ln(rho xi)_pred|`.
    pub ln_rho_xi_gap: f64,
    pub k_rho: Option<f64>,
    /// `(1 - rho) ln K(rho) * A`.
    pub k_shape: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub rho: f64,
    pub exact: ExactRecord,
    pub predicted: PredictedRecord,
    pub ratios: Ratios,
    pub precision: Precision,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowFailure {
    pub rho: f64,
    pub class: ErrorClass,
    pub message: String,
}

/// Whether a sequence moves monotonically toward a target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trend {
    pub distances: Vec<f64>,
    pub monotone: bool,
}

impl Trend {
    pub fn toward(values: &[f64], target: f64) -> Trend {
        let distances: Vec<f64> = values.iter().map(|v| (v - target).abs()).collect();
        let monotone = distances.windows(2).all(|w| w[1] < w[0]);
        Trend { distances, monotone }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trends {
    pub alpha_bar_ratio: Trend,
    pub ln_rho_xi_gap: Trend,
    pub k_shape: Trend,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub rho_grid: Vec<f64>,
    pub inputs: MellinData,
    pub b_fit: Option<f64>,
    pub b_fit_loads: Vec<f64>,
    pub rows: Vec<ReportRow>,
    pub trends: Trends,
    pub failures: Vec<RowFailure>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportOptions {
    pub tol: f64,
    /// Arithmetic for every load; `None` picks extended precision from 0.95 up.
    pub precision: Option<Precision>,
    /// Loads whose exact `K` calibrates `B`; empty means all rows.
    pub b_fit_loads: Vec<f64>,
    pub threads: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            tol: 1e-12,
            precision: None,
            b_fit_loads: Vec::new(),
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

/// Precision used at `rho` when none is forced.
pub fn auto_precision(rho: f64) -> Precision {
    if rho >= 0.95 {
        Precision::extended()
    } else {
        Precision::Standard
    }
}

/// Exact quantities at one load.
pub fn exact_record(rho: f64, tol: f64, precision: Precision) -> Result<ExactRecord> {
    let params = SystemParams::from_load(rho)?;
    let opts = SolverOptions {
        tol,
        precision,
        ..SolverOptions::default()
    };
    let dist = solve_mean_field(&params, &opts)?;
    let k_rho = dist.tail_constant()?;
    let alpha_prime = dist.alpha_prime_exact()?;
    let mut series = auto_coefficients(rho, precision)?;
    let xi = find_xi(&mut series)?.xi;
    Ok(ExactRecord {
        alpha_bar: dist.alpha_bar,
        xi,
        ln_rho_xi: rho.ln() + xi.ln(),
        k_rho,
        ln_k_rho: dist.ln_tail_constant_product(),
        alpha_prime,
    })
}

/// Exact and predicted tables over `rho_grid`, computed concurrently.
pub fn build_report(rho_grid: &[f64], mellin: &MellinData, opts: &ReportOptions) -> Result<AsymptoticReport> {
    for &rho in rho_grid {
        check_load(rho)?;
    }
    let mut grid = rho_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite loads"));
    grid.dedup();

    let exact = exact_all(&grid, opts);
    let mut ok: Vec<(f64, ExactRecord, Precision)> = Vec::new();
    let mut failures = Vec::new();
    for (rho, prec, r) in exact {
        match r {
            Ok(e) => ok.push((rho, e, prec)),
            Err(e) => failures.push(RowFailure {
                rho,
                class: e.class(),
                message: e.to_string(),
            }),
        }
    }

    let b_fit_loads: Vec<f64> = if opts.b_fit_loads.is_empty() {
        ok.iter().map(|r| r.0).collect()
    } else {
        opts.b_fit_loads.clone()
    };
    let pts: Vec<(f64, f64)> = ok
        .iter()
        .filter(|r| b_fit_loads.iter().any(|b| (b - r.0).abs() < 1e-12))
        .map(|r| (r.0, r.1.ln_k_rho))
        .collect();
    let b_fit = if pts.is_empty() { None } else { Some(fit_b(&pts, mellin)?) };

    let mut rows = Vec::with_capacity(ok.len());
    for (rho, exact, precision) in ok {
        let ln_k_pred = b_fit.map(|b| predict_ln_tail_constant(rho, mellin, b)).transpose()?;
        let predicted = PredictedRecord {
            alpha_prime: predict_alpha_prime(rho, mellin)?,
            alpha_bar_linear: predict_alpha_bar_linear(rho, mellin)?,
            xi: predict_xi(rho, mellin)?,
            ln_rho_xi: predict_ln_rho_xi(rho, mellin)?,
            k_rho: ln_k_pred.map(f64::exp),
            ln_k_rho: ln_k_pred,
        };
        let ratios = Ratios {
            alpha_bar: exact.alpha_prime / predicted.alpha_prime,
            xi: (exact.ln_rho_xi - predicted.ln_rho_xi).exp(),
            ln_rho_xi_gap: (exact.ln_rho_xi - predicted.ln_rho_xi).abs(),
            k_rho: ln_k_pred.map(|p| (exact.ln_k_rho - p).exp()),
            k_shape: (1.0 - rho) * exact.ln_k_rho * mellin.cstar1,
        };
        rows.push(ReportRow {
            rho,
            exact,
            predicted,
            ratios,
            precision,
        });
    }
    let col = |f: fn(&ReportRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let trends = Trends {
        alpha_bar_ratio: Trend::toward(&col(|r| r.ratios.alpha_bar), 1.0),
        ln_rho_xi_gap: Trend::toward(&col(|r| r.ratios.ln_rho_xi_gap), 0.0),
        k_shape: Trend::toward(&col(|r| r.ratios.k_shape), 1.0),
    };
    Ok(AsymptoticReport {
        rho_grid: grid,
        inputs: *mellin,
        b_fit,
        b_fit_loads,
        rows,
        trends,
        failures,
    })
}

type ExactOutcome = (f64, Precision, Result<ExactRecord>);

fn exact_all(grid: &[f64], opts: &ReportOptions) -> Vec<ExactOutcome> {
    let job = |rho: f64| {
        let prec = opts.precision.unwrap_or_else(|| auto_precision(rho));
        (rho, prec, exact_record(rho, opts.tol, prec))
    };
    let threads = opts.threads.max(1).min(grid.len().max(1));
    if threads <= 1 {
        return grid.iter().map(|&r| job(r)).collect();
    }
    // Largest loads first; each worker pulls the next index.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, b| grid[*b].partial_cmp(&grid[*a]).expect("finite loads"));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(Vec::with_capacity(grid.len()));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&idx) = order.get(i) else { break };
                let out = job(grid[idx]);
                results.lock().expect("no poisoned workers").push(out);
            });
        }
    });
    let mut out = results.into_inner().expect("no poisoned workers");
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite loads"));
    out
}

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 11] = [
    "rho",
    "alpha_bar_exact",
    "alpha_bar_pred",
    "xi_exact",
    "xi_pred",
    "K_exact",
    "K_pred",
    "ratio_alpha_bar",
    "ratio_xi",
    "ratio_K",
    "ln_rho_xi_gap",
];

impl AsymptoticReport {
    /// One record per row in [`CSV_COLUMNS`] order; missing values are empty.
    pub fn csv_records(&self) -> Vec<Vec<String>> {
        let f = |x: f64| format!("{x:.12e}");
        let o = |x: Option<f64>| x.map(f).unwrap_or_default();
        self.rows
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.rho),
                    f(r.exact.alpha_bar),
                    f(r.predicted.alpha_prime),
                    f(r.exact.xi),
                    f(r.predicted.xi),
                    f(r.exact.k_rho),
                    o(r.predicted.k_rho),
                    f(r.ratios.alpha_bar),
                    f(r.ratios.xi),
                    o(r.ratios.k_rho),
                    f(r.ratios.ln_rho_xi_gap),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mellin() -> MellinData {
        MellinData {
            cstar1: 1.3038929933,
            dcds1: -0.21216282,
            cstar1_err: 1e-10,
            dcds1_err: 1e-10,
        }
    }

    #[test]
    fn unit_log_load() {
        let rho = (-1.0f64).exp();
        assert_relative_eq!(predict_alpha_prime(rho, &mellin()).unwrap(), 1.0 / 1.3038929933, max_relative = 1e-14);
    }

    #[test]
    fn xi_formula_in_logs() {
        let m = mellin();
        let rho: f64 = 0.93;
        let l = rho.ln();
        let got = predict_ln_rho_xi(rho, &m).unwrap();
        assert_relative_eq!(got, -1.0 / (l * m.cstar1) - m.dcds1 / m.cstar1, max_relative = 1e-15);
        assert_relative_eq!((rho * predict_xi(rho, &m).unwrap()).ln(), got, max_relative = 1e-13);
    }

    #[test]
    fn alpha_bar_forms_agree_to_first_order() {
        let m = mellin();
        for rho in [0.99, 0.999, 0.9999] {
            let a = predict_alpha_prime(rho, &m).unwrap();
            let b = predict_alpha_bar_linear(rho, &m).unwrap();
            assert!((a / b - 1.0).abs() < 1.5 * (1.0 - rho));
        }
    }

    #[test]
    fn b_fit_inverts_the_prediction() {
        let m = mellin();
        let pts: Vec<(f64, f64)> = [0.9, 0.95]
            .iter()
            .map(|&r| (r, predict_ln_tail_constant(r, &m, 0.5).unwrap()))
            .collect();
        assert_relative_eq!(fit_b(&pts, &m).unwrap(), 0.5, max_relative = 1e-12);
        assert!(fit_b(&[], &m).is_err());
    }

    #[test]
    fn sensitivity_to_a() {
        let m = mellin();
        let up = tail_constant_sensitivity(0.98, &m, 0.01).unwrap();
        let down = tail_constant_sensitivity(0.98, &m, -0.01).unwrap();
        assert!(up < 1.0 && down > 1.0);
        assert_relative_eq!(up.ln(), 1.0 / (0.02 * m.cstar1 * 1.01) - 1.0 / (0.02 * m.cstar1), max_relative = 1e-12);
    }

    #[test]
    fn empty_grid_gives_empty_report() {
        let r = build_report(&[], &mellin(), &ReportOptions::default()).unwrap();
        assert!(r.rows.is_empty() && r.failures.is_empty() && r.b_fit.is_none());
        assert!(build_report(&[1.2], &mellin(), &ReportOptions::default()).is_err());
    }

    #[test]
    fn trend_detection() {
        assert!(Trend::toward(&[1.3, 1.1, 1.01], 1.0).monotone);
        assert!(!Trend::toward(&[1.3, 0.6, 1.01], 1.0).monotone);
    }
}
