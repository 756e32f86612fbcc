//! Scaled coefficients `c_k(rho)` of the entire function `c(z, rho)` and the
//! anchoring zero `xi(rho)`.
//!
//! `c(z) = sum_{k>=1} c_k z^{k-1}` with `c_1 = 1` and
//! `c_k = L^3 / (1 - rho^{k-1}) * sum_{j<k} c_j c_{k-j} rho^{j+k-1} / (1 - rho^j)^2`,
//! `L = ln rho`. Inside the unit disk the power series is used directly.
//! Further out on the positive axis `c` is climbed along the geometric grid
//! `x_n = b rho^{-n}` with
//! `c(x) = c(rho x) [1 + x L^3 S(x)]`, `S(x) = sum_{i>=1} i rho^{i+1} c(rho^{i+1} x)`,
//! where `S` and `T(x) = sum_{i>=1} rho^i c(rho^i x)` obey
//! `S(x/rho) = rho (S(x) + T(x))` and `T(x/rho) = rho (c(x) + T(x))`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::MeanFieldDistribution;
use crate::precision::{Big, Precision, Real};

const DEFAULT_EXTENDED_BITS: u32 = Precision::DEFAULT_EXTENDED_BITS;

/// Relative stability of `xi` required under doubling of the truncation.
pub const XI_DOUBLING_RTOL: f64 = 1e-8;
/// Bound on `|c(xi)| / |c(rho xi)|` accepted for the anchoring zero.
pub const XI_ZERO_TOL: f64 = 1e-12;
/// Agreement required by [`calibrate_alpha`].
pub const RECONSTRUCTION_RTOL: f64 = 1e-6;

/// Coefficients `c_1..c_M` at one load, plus the calibrated constants once known.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaledSeries {
    pub rho: f64,
    #[serde(rename = "M")]
    pub m: usize,
    /// `c[k - 1] = c_k`; entries that underflow `f64` are stored as 0.
    pub c: Vec<f64>,
    /// Arithmetic used for the recurrence and for evaluation beyond the unit disk.
    pub precision: Precision,
    pub xi: Option<f64>,
    pub a1: Option<f64>,
    pub alpha_prime: Option<f64>,
    pub residuals: BTreeMap<String, f64>,
    /// `ln |c_k|`, which survives where `c_k` itself underflows.
    #[serde(skip)]
    ln_abs: Vec<f64>,
}

/// The coefficient recurrence in any arithmetic. In `f64` the sequence is
/// cut at the first coefficient below `1e-300` in magnitude.
pub fn scaled_coefficients_in<R: Real>(rho: &R, m: usize) -> Result<Vec<R>> {
    let one = rho.one_like();
    let l = rho.ln();
    let l3 = l.clone() * l.clone() * l;
    let mut w = Vec::with_capacity(m + 1);
    w.push(rho.zero_like());
    let mut pj = one.clone();
    for _ in 1..=m {
        pj *= rho.clone();
        let d = one.clone() - pj.clone();
        w.push(pj.clone() / (d.clone() * d));
    }
    let mut c: Vec<R> = vec![rho.zero_like(), one.clone()];
    let mut pk = one.clone(); // rho^{k-1}
    let underflow = rho.bits() <= 53;
    for k in 2..=m {
        pk *= rho.clone();
        let mut s = rho.zero_like();
        for j in 1..k {
            s += c[j].clone() * c[k - j].clone() * w[j].clone();
        }
        let ck = l3.clone() * pk.clone() * s / (one.clone() - pk.clone());
        if !ck.is_finite() {
            return Err(Error::Precision(format!(
                "c_{k}({}) is not representable; use extended precision",
                rho.to_f64()
            )));
        }
        if underflow && ck.abs().to_f64() < 1e-300 {
            break;
        }
        c.push(ck);
    }
    c.remove(0);
    Ok(c)
}

/// `c_1..c_M` at load `rho`.
pub fn scaled_coefficients(rho: f64, m: usize, precision: Precision) -> Result<ScaledSeries> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!("load rho = {rho} must lie in (0, 1)")));
    }
    if m < 2 {
        return Err(Error::InvalidInput(format!("truncation M = {m} must be >= 2")));
    }
    let (c, ln_abs) = match precision {
        Precision::Standard => {
            let c = scaled_coefficients_in(&rho, m)?;
            let ln_abs = c.iter().map(|v| f64::abs(*v).ln()).collect();
            (c, ln_abs)
        }
        Precision::Extended { bits } => {
            let cb = scaled_coefficients_in(&Big::new(rho, bits), m)?;
            let c = cb.iter().map(|v| v.to_f64()).collect();
            let ln_abs = cb.iter().map(|v| Real::abs(v).ln().to_f64()).collect();
            (c, ln_abs)
        }
    };
    Ok(ScaledSeries {
        rho,
        m: c.len(),
        c,
        precision,
        xi: None,
        a1: None,
        alpha_prime: None,
        residuals: BTreeMap::new(),
        ln_abs,
    })
}

/// Truncation large enough that the series tail on the unit disk is below
/// the rounding level of `precision`, found by doubling from 32.
pub fn auto_coefficients(rho: f64, precision: Precision) -> Result<ScaledSeries> {
    let target = rounding_unit(precision.bits()) * 1e-3;
    let mut m = 32;
    loop {
        let s = scaled_coefficients(rho, m, precision)?;
        if s.m < m || s.tail_bound(1.0).is_some_and(|b| b <= target) {
            return Ok(s);
        }
        if m >= 4096 {
            return Err(Error::Truncation(format!(
                "rho = {rho}: series tail on the unit disk not certified with M = {m}"
            )));
        }
        m *= 2;
    }
}

fn rounding_unit(bits: u32) -> f64 {
    2f64.powi(-(bits as i32))
}

impl ScaledSeries {
    fn refresh_ln_abs(&mut self) {
        if self.ln_abs.len() != self.c.len() {
            self.ln_abs = self.c.iter().map(|v| f64::abs(*v).ln()).collect();
        }
    }

    /// Whether consecutive coefficients alternate in sign (checked on `ln`
    /// magnitudes' companions so that underflowed entries are skipped).
    pub fn alternates(&self) -> bool {
        self.first_non_alternation().is_none()
    }

    /// First `k` with `c_k c_{k+1} >= 0` among representable coefficients.
    pub fn first_non_alternation(&self) -> Option<usize> {
        (0..self.c.len().saturating_sub(1))
            .filter(|&i| self.c[i] != 0.0 && self.c[i + 1] != 0.0)
            .find(|&i| self.c[i].signum() == self.c[i + 1].signum())
            .map(|i| i + 1)
    }

    /// Bound on `sum_{k>M} |c_k| r^{k-1}` from the geometric majorant fitted
    /// to the last ratios; `None` when the majorant does not converge.
    pub fn tail_bound(&self, r: f64) -> Option<f64> {
        let ln_abs = if self.ln_abs.len() == self.c.len() {
            self.ln_abs.clone()
        } else {
            self.c.iter().map(|v| f64::abs(*v).ln()).collect()
        };
        let n = ln_abs.len();
        if n < 4 {
            return None;
        }
        let ln_r = r.ln();
        let ratio = (n - 3..n)
            .map(|k| ln_abs[k] - ln_abs[k - 1])
            .fold(f64::NEG_INFINITY, f64::max);
        let ln_q = ratio + ln_r;
        if !(ln_q < 0.0) {
            return None;
        }
        let q = ln_q.exp();
        Some((ln_abs[n - 1] + (n - 1) as f64 * ln_r).exp() * q / (1.0 - q))
    }

    /// Largest radius (at most 1e3) on which the tail bound stays below `tol`.
    pub fn certified_radius(&self, tol: f64) -> f64 {
        let ok = |r: f64| self.tail_bound(r).is_some_and(|b| b <= tol);
        if !ok(1e-6) {
            return 0.0;
        }
        let (mut lo, mut hi) = (1e-6f64, 1e3f64);
        if ok(hi) {
            return hi;
        }
        for _ in 0..80 {
            let mid = (lo * hi).sqrt();
            if ok(mid) {
                lo = mid
            } else {
                hi = mid
            }
        }
        lo
    }

    /// Series value with its certified truncation bound.
    pub fn eval_series(&self, z: f64) -> Result<(f64, f64)> {
        let bound = self
            .tail_bound(z.abs())
            .ok_or_else(|| Error::Domain(format!("z = {z} outside the certified series disk")))?;
        Ok((horner(&self.c, &z), bound))
    }

    pub fn eval_series_complex(&self, z: Complex64) -> Result<(Complex64, f64)> {
        let bound = self
            .tail_bound(z.norm())
            .ok_or_else(|| Error::Domain(format!("z = {z} outside the certified series disk")))?;
        let v = self
            .c
            .iter()
            .rev()
            .fold(Complex64::zero(), |acc, ck| acc * z + ck);
        Ok((v, bound))
    }

    /// `c(x)` on the positive axis, series or ladder as appropriate.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::Domain(format!("c(x) is evaluated for finite x >= 0, got {x}")));
        }
        match self.precision {
            Precision::Standard => Ok(self.kernel::<f64>(53)?.eval(&x).c),
            Precision::Extended { bits } => Ok(self.kernel::<Big>(bits)?.eval(&Big::new(x, bits)).c.to_f64()),
        }
    }

    /// `v(x) = x L^2 S(x)`, so that `c(x) = c(rho x) (1 + L v(x))`.
    pub fn eval_v(&self, x: f64) -> Result<f64> {
        let l = self.rho.ln();
        match self.precision {
            Precision::Standard => {
                let r = self.kernel::<f64>(53)?.eval(&x);
                Ok(r.x * l * l * r.s)
            }
            Precision::Extended { bits } => {
                let r = self.kernel::<Big>(bits)?.eval(&Big::new(x, bits));
                Ok((r.x * r.s).to_f64() * l * l)
            }
        }
    }

    fn kernel<R: Real>(&self, bits: u32) -> Result<Kernel<R>> {
        let rho = R::with_bits(self.rho, bits);
        let coeffs = if bits <= 53 {
            self.c.iter().map(|v| rho.lift(*v)).collect()
        } else {
            scaled_coefficients_in(&rho, self.m)?
        };
        let base = self.base_radius(bits);
        Ok(Kernel::new(rho, coeffs, base))
    }

    /// Radius of the series base of the ladder.
    fn base_radius(&self, bits: u32) -> f64 {
        let tol = rounding_unit(bits) * 1e-3;
        self.certified_radius(tol).clamp(1e-6, 1.0)
    }
}

fn horner<R: Real>(c: &[R], z: &R) -> R {
    c.iter()
        .rev()
        .fold(z.zero_like(), |acc, ck| acc * z.clone() + ck.clone())
}

/// State at one rung `x` of the geometric grid.
#[derive(Clone, Debug)]
struct Rung<R: Real> {
    x: R,
    c: R,
    s: R,
    t: R,
}

struct Kernel<R: Real> {
    rho: R,
    l3: R,
    coeffs: Vec<R>,
    /// `q/(1-q)` and `q^2/(1-q)^2` with `q = rho^{k+1}`, for `T` and `S` at the base.
    w1: Vec<R>,
    w2: Vec<R>,
    base: R,
    ln_rho: f64,
    ln_base: f64,
}

impl<R: Real> Kernel<R> {
    fn new(rho: R, coeffs: Vec<R>, base: f64) -> Self {
        let one = rho.one_like();
        let l = rho.ln();
        let l3 = l.clone() * l.clone() * l;
        let mut w1 = Vec::with_capacity(coeffs.len());
        let mut w2 = Vec::with_capacity(coeffs.len());
        let mut q = one.clone();
        for _ in 0..coeffs.len() {
            q *= rho.clone();
            let r = q.clone() / (one.clone() - q.clone());
            w2.push(r.clone() * r.clone());
            w1.push(r);
        }
        let ln_rho = rho.ln().to_f64();
        Kernel {
            base: rho.lift(base),
            rho,
            l3,
            coeffs,
            w1,
            w2,
            ln_rho,
            ln_base: base.ln(),
        }
    }

    /// Series evaluation of `c`, `S` and `T` at `x` inside the base disk.
    fn rung0(&self, x: R) -> Rung<R> {
        let zero = x.zero_like();
        let (mut c, mut s, mut t) = (zero.clone(), zero.clone(), zero);
        for k in (0..self.coeffs.len()).rev() {
            c = c * x.clone() + self.coeffs[k].clone();
            s = s * x.clone() + self.coeffs[k].clone() * self.w2[k].clone();
            t = t * x.clone() + self.coeffs[k].clone() * self.w1[k].clone();
        }
        Rung { x, c, s, t }
    }

    fn up(&self, r: &mut Rung<R>) {
        let s = self.rho.clone() * (r.s.clone() + r.t.clone());
        let t = self.rho.clone() * (r.c.clone() + r.t.clone());
        r.x = r.x.clone() / self.rho.clone();
        r.c = r.c.clone() * (r.x.one_like() + r.x.clone() * self.l3.clone() * s.clone());
        r.s = s;
        r.t = t;
    }

    /// Number of rungs between the base disk and `x`.
    fn rungs_to(&self, x: &R) -> usize {
        let ln_x = x.ln().to_f64();
        if ln_x <= self.ln_base {
            return 0;
        }
        ((ln_x - self.ln_base) / -self.ln_rho).ceil() as usize
    }

    fn eval(&self, x: &R) -> Rung<R> {
        let zero = x.zero_like();
        if !(*x > zero) {
            return self.rung0(x.clone());
        }
        let mut m = self.rungs_to(x);
        let mut b = x.clone() * self.rho.powi(m as i32);
        // Guard the boundary against rounding in the rung count.
        while b > self.base {
            m += 1;
            b *= self.rho.clone();
        }
        let mut r = self.rung0(b);
        for _ in 0..m {
            self.up(&mut r);
        }
        r.x = x.clone();
        r
    }
}

/// Outcome of [`find_xi`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XiReport {
    pub xi: f64,
    /// `|c(xi)| / |c(rho xi)|`, the size of `c(xi)` against the terms that cancel there.
    pub zero_residual: f64,
    /// `ln |c(rho xi)|`.
    pub ln_scale: f64,
    /// `1 + xi L^3 S(xi)`, which vanishes at the anchoring zero.
    pub anchoring: f64,
    /// Relative change of `xi` when `M` is doubled.
    pub doubling_shift: f64,
    /// Grid steps between the series disk and `xi`.
    pub rungs: usize,
    pub precision: Precision,
}

/// Smallest positive zero of `c(., rho)`. Switches to extended precision
/// when `c` underflows `f64` before the first sign change.
pub fn find_xi(series: &mut ScaledSeries) -> Result<XiReport> {
    series.refresh_ln_abs();
    let report = match series.precision {
        Precision::Standard => match xi_with::<f64>(series, 53) {
            Err(Error::Precision(_)) => {
                let bits = DEFAULT_EXTENDED_BITS;
                let mut r = xi_with::<Big>(series, bits)?;
                r.precision = Precision::Extended { bits };
                r
            }
            other => other?,
        },
        Precision::Extended { bits } => xi_with::<Big>(series, bits)?,
    };
    series.xi = Some(report.xi);
    series.residuals.insert("xi_zero".into(), report.zero_residual);
    series.residuals.insert("xi_doubling".into(), report.doubling_shift);
    series.residuals.insert("anchoring".into(), report.anchoring.abs());
    if report.doubling_shift > XI_DOUBLING_RTOL {
        return Err(Error::Truncation(format!(
            "rho = {}: xi moved by {:.2e} (relative) when M was doubled; increase M",
            series.rho, report.doubling_shift
        )));
    }
    Ok(report)
}

struct Root<R: Real> {
    xi: R,
    at: Rung<R>,
    rungs: usize,
}

fn xi_with<R: Real>(series: &ScaledSeries, bits: u32) -> Result<XiReport> {
    let kernel = series.kernel::<R>(bits)?;
    let z = locate_zero(&kernel, bits)?;
    let prev = kernel.eval(&(z.xi.clone() * kernel.rho.clone()));
    let scale = prev.c.abs();
    let zero_residual = (z.at.c.abs() / scale.clone()).to_f64();
    let anchoring = (z.xi.one_like() + z.xi.clone() * kernel.l3.clone() * z.at.s.clone()).to_f64();

    let doubled = ScaledSeries {
        m: series.m * 2,
        ..scaled_coefficients(series.rho, series.m * 2, series.precision)?
    };
    let k2 = doubled.kernel::<R>(bits)?;
    let z2 = locate_zero(&k2, bits)?;
    let doubling_shift = ((z2.xi - z.xi.clone()).abs() / z.xi.clone()).to_f64();
    Ok(XiReport {
        xi: z.xi.to_f64(),
        zero_residual,
        ln_scale: scale.ln().to_f64(),
        anchoring,
        doubling_shift,
        rungs: z.rungs,
        precision: if bits <= 53 {
            Precision::Standard
        } else {
            Precision::Extended { bits }
        },
    })
}

const SCAN_OFFSETS: usize = 4;
const MAX_RUNGS: usize = 5_000_000;

fn locate_zero<R: Real>(k: &Kernel<R>, bits: u32) -> Result<Root<R>> {
    let zero = k.rho.zero_like();
    let f64_floor = if bits <= 53 { Some(1e-280) } else { None };
    // Inside the base disk.
    let samples = 64;
    let mut prev = (zero.clone(), k.rho.one_like());
    for i in 1..=samples {
        let x = k.base.clone() * k.rho.lift(i as f64 / samples as f64);
        let c = k.rung0(x.clone()).c;
        if c <= zero {
            return Ok(bisect(k, prev.0, x, bits, 0));
        }
        prev = (x, c);
    }
    // Interleaved ladders x = base rho^{j/4 - n} for j = 3, 2, 1, 0.
    let mut ladders: Vec<Rung<R>> = (0..SCAN_OFFSETS)
        .map(|j| {
            let b = k.base.clone() * (k.rho.ln() * k.rho.lift(j as f64 / SCAN_OFFSETS as f64)).exp();
            k.rung0(b)
        })
        .collect();
    for n in 1..=MAX_RUNGS {
        for j in (0..SCAN_OFFSETS).rev() {
            k.up(&mut ladders[j]);
            let r = &ladders[j];
            if r.c <= zero {
                return Ok(bisect(k, prev.0, r.x.clone(), bits, n));
            }
            if let Some(floor) = f64_floor {
                if r.c.to_f64() < floor {
                    return Err(Error::Precision(format!(
                        "c underflows f64 at x = {:.3e} before its first zero",
                        r.x.to_f64()
                    )));
                }
            }
            if !r.c.is_finite() {
                return Err(Error::Precision(format!("c is not finite at x = {:.3e}", r.x.to_f64())));
            }
            prev = (r.x.clone(), r.c.clone());
        }
    }
    Err(Error::Truncation(format!(
        "no sign change of c within {MAX_RUNGS} grid steps"
    )))
}

/// Bisection on `[lo, hi]` with `c(lo) > 0 >= c(hi)`, down to adjacent
/// representable values.
fn bisect<R: Real>(k: &Kernel<R>, mut lo: R, mut hi: R, bits: u32, rungs: usize) -> Root<R> {
    let zero = k.rho.zero_like();
    let two = k.rho.lift(2.0);
    let eps = k.rho.lift(rounding_unit(bits) * 2.0);
    let mut hi_rung = k.eval(&hi);
    if hi_rung.c == zero {
        return Root { xi: hi, at: hi_rung, rungs };
    }
    for _ in 0..(bits as usize + 64) {
        if hi.clone() - lo.clone() <= eps.clone() * hi.clone() {
            break;
        }
        let mid = (lo.clone() + hi.clone()) / two.clone();
        let r = k.eval(&mid);
        if r.c > zero {
            lo = mid;
        } else {
            hi = mid;
            hi_rung = r;
            if hi_rung.c == zero {
                break;
            }
        }
    }
    let lo_rung = k.eval(&lo);
    if lo_rung.c.abs() < hi_rung.c.abs() {
        Root { xi: lo, at: lo_rung, rungs }
    } else {
        Root { xi: hi, at: hi_rung, rungs }
    }
}

/// Reconstruction of the mean-field law from the scaled series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reconstruction {
    pub a1: f64,
    pub alpha_prime: f64,
    /// `-a_1 / (L^3 alpha'(1))`, to be compared with the anchoring zero.
    pub xi_definitional: f64,
    /// `rel_err[k-1]` compares `rho^k a(rho^k)` with `alpha_{k-1}`.
    pub rel_err: Vec<f64>,
    pub max_rel_err: f64,
    /// `k` at which the worst error occurs.
    pub worst_k: usize,
}

/// Compares `alpha_{k-1}` with `rho^k a_1 c(rho^k xi)`, `a_1 = K(rho)/rho`,
/// for `k = 1..=k_max`, in logarithms.
pub fn reconstruct_alpha(series: &ScaledSeries, dist: &MeanFieldDistribution, k_max: usize) -> Result<Reconstruction> {
    if (series.rho - dist.rho).abs() > 1e-15 {
        return Err(Error::InvalidInput(format!(
            "series at rho = {} and distribution at rho = {}",
            series.rho, dist.rho
        )));
    }
    let xi = series
        .xi
        .ok_or_else(|| Error::InvalidInput("anchoring zero not located; run find_xi first".into()))?;
    let k_rho = dist.tail_constant()?;
    let alpha_prime = dist.alpha_prime_exact()?;
    let rho = series.rho;
    let a1 = k_rho / rho;
    let l = rho.ln();
    let xi_definitional = -a1 / (l * l * l * alpha_prime);
    let k_max = k_max.min(dist.k_trunc + 1);
    let ln_c = match series.precision {
        Precision::Standard if series.c.iter().all(|v| *v != 0.0) || rho < 0.9 => ln_c_on_grid::<f64>(series, 53, xi, k_max)?,
        Precision::Standard => ln_c_on_grid::<Big>(series, DEFAULT_EXTENDED_BITS, xi, k_max)?,
        Precision::Extended { bits } => ln_c_on_grid::<Big>(series, bits, xi, k_max)?,
    };
    let ln_a1 = a1.ln();
    let mut rel_err = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let rec = k as f64 * l + ln_a1 + ln_c[k - 1];
        rel_err.push((rec - dist.log_alpha[k - 1]).exp_m1().abs());
    }
    let (worst, max_rel_err) = rel_err
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, e)| if *e > acc.1 || e.is_nan() { (i, *e) } else { acc });
    Ok(Reconstruction {
        a1,
        alpha_prime,
        xi_definitional,
        rel_err,
        max_rel_err,
        worst_k: worst + 1,
    })
}

/// `ln c(rho^k xi)` for `k = 1..=k_max`.
fn ln_c_on_grid<R: Real>(series: &ScaledSeries, bits: u32, xi: f64, k_max: usize) -> Result<Vec<f64>> {
    let kernel = series.kernel::<R>(bits)?;
    let xi_r = kernel.rho.lift(xi);
    // Points rho^k xi with k > top lie in the series disk; the rest sit on
    // one ladder climbed from rho^top xi.
    let mut top = kernel.rungs_to(&(xi_r.clone() * kernel.rho.clone())) + 1;
    while xi_r.clone() * kernel.rho.powi(top as i32) > kernel.base {
        top += 1;
    }
    let mut out = vec![f64::NAN; k_max];
    for k in top..=k_max {
        out[k - 1] = kernel.rung0(xi_r.clone() * kernel.rho.powi(k as i32)).c.ln().to_f64();
    }
    let mut r = kernel.rung0(xi_r.clone() * kernel.rho.powi(top as i32));
    for k in (1..top).rev() {
        kernel.up(&mut r);
        if k <= k_max {
            out[k - 1] = r.c.ln().to_f64();
        }
    }
    if let Some(k) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Precision(format!(
            "c(rho^{} xi) not positive and finite; evaluation lost accuracy",
            k + 1
        )));
    }
    Ok(out)
}

/// Sets `a1 = K(rho)/rho` and `alpha_prime = alpha_bar` and checks the
/// reconstruction of `alpha_{k-1}` for every `k` with `alpha_{k-1} > 1e-10`.
pub fn calibrate_alpha(series: &ScaledSeries, dist: &MeanFieldDistribution) -> Result<(ScaledSeries, Reconstruction)> {
    let k_max = dist.alpha.iter().take_while(|a| **a > 1e-10).count().max(1);
    let rec = reconstruct_alpha(series, dist, k_max)?;
    let mut out = series.clone();
    out.a1 = Some(rec.a1);
    out.alpha_prime = Some(rec.alpha_prime);
    out.residuals.insert("reconstruction".into(), rec.max_rel_err);
    if !(rec.max_rel_err <= RECONSTRUCTION_RTOL) {
        return Err(Error::Invariant(format!(
            "rho = {}: reconstruction of alpha_{} off by {:.3e} (relative); increase M or K",
            series.rho,
            rec.worst_k - 1,
            rec.max_rel_err
        )));
    }
    Ok((out, rec))
}

/// `b(1) = a_1 S(xi)`, which must equal `alpha'(1)`.
pub fn b_at_one(series: &ScaledSeries) -> Result<f64> {
    let (xi, a1) = series
        .xi
        .zip(series.a1)
        .ok_or_else(|| Error::InvalidInput("series not calibrated".into()))?;
    let s = match series.precision {
        Precision::Standard => series.kernel::<f64>(53)?.eval(&xi).s,
        Precision::Extended { bits } => series.kernel::<Big>(bits)?.eval(&Big::new(xi, bits)).s.to_f64(),
    };
    Ok(a1 * s)
}

/// Relative defect of the functional relation at a complex point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FunctionalResidual {
    pub residual: f64,
    /// Bound on the omitted `i > J` terms and the series tails, relative to `|c(z)|`.
    pub truncation_bound: f64,
}

/// `|c(z) - c(rho z)[1 + z L^3 sum_{i<=J} i rho^{i+1} c(rho^{i+1} z)]| / |c(z)|`
/// for `z` inside the certified series disk.
pub fn functional_residual(series: &ScaledSeries, z: Complex64, j: usize) -> Result<FunctionalResidual> {
    let rho = series.rho;
    let r_cert = series.certified_radius(1e-15);
    if z.norm() > r_cert {
        return Err(Error::Domain(format!(
            "|z| = {:.3e} exceeds the certified radius {:.3e}",
            z.norm(),
            r_cert
        )));
    }
    let l = rho.ln();
    let l3 = l * l * l;
    let (lhs, b0) = series.eval_series_complex(z)?;
    let (c_rho, b1) = series.eval_series_complex(z * rho)?;
    let mut sum = Complex64::zero();
    let mut p = rho;
    for i in 1..=j {
        p *= rho;
        let (ci, _) = series.eval_series_complex(z * p)?;
        sum += ci * (i as f64 * p);
    }
    let rhs = c_rho * (Complex64::one() + z * l3 * sum);
    let majorant: f64 = series.c.iter().rev().fold(0.0, |acc, ck| acc * z.norm() + f64::abs(*ck));
    let jf = j as f64;
    let tail = rho.powi(j as i32 + 2) * ((jf + 1.0) - jf * rho) / ((1.0 - rho) * (1.0 - rho));
    let scale = lhs.norm().max(f64::MIN_POSITIVE);
    Ok(FunctionalResidual {
        residual: (lhs - rhs).norm() / scale,
        truncation_bound: (z.norm() * l3.abs() * c_rho.norm() * tail * majorant + b0 + b1 * (1.0 + majorant)) / scale,
    })
}

/// `sum_{j>=1} (rho^j/(1-rho^j))^2 t^j` and `t sum_{j>=1} j rho^{j+1}/(1 - t rho^{j+1})`,
/// each where it applies.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FValue {
    pub power_form: Option<Complex64>,
    pub pole_form: Option<Complex64>,
}

impl FValue {
    pub fn value(&self) -> Complex64 {
        self.power_form.or(self.pole_form).expect("at least one form applies")
    }
}

pub fn evaluate_f(t: Complex64, rho: f64) -> Result<FValue> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!("load rho = {rho} must lie in (0, 1)")));
    }
    let power_ok = t.norm() * rho * rho < 1.0;
    let pole_ok = t.re <= 0.0;
    if !power_ok && !pole_ok {
        return Err(Error::Domain(format!(
            "t = {t} lies outside |t| < rho^-2 and outside Re t <= 0"
        )));
    }
    let power_form = power_ok.then(|| f_power(t, rho));
    let pole_form = pole_ok.then(|| f_pole(t, rho));
    Ok(FValue { power_form, pole_form })
}

fn f_power(t: Complex64, rho: f64) -> Complex64 {
    let q = t.norm() * rho * rho;
    let mut sum = Complex64::zero();
    let mut tj = Complex64::one();
    let mut pj = 1.0;
    for _ in 1..1_000_000 {
        pj *= rho;
        tj *= t;
        let w = pj / (1.0 - pj);
        let term = tj * (w * w);
        sum += term;
        // Later terms shrink at least by q / (1 - rho)^2 relative factors
        // that tend to q, so stop once the geometric remainder is negligible.
        if term.norm() * q / (1.0 - q) <= 1e-17 * sum.norm().max(f64::MIN_POSITIVE) && pj < 0.5 {
            break;
        }
    }
    sum
}

fn f_pole(t: Complex64, rho: f64) -> Complex64 {
    let mut sum = Complex64::zero();
    let mut p = rho;
    for j in 1..10_000_000u64 {
        p *= rho;
        let term = (j as f64 * p) / (Complex64::one() - t * p);
        sum += term;
        let jf = j as f64;
        // Remainder bounded by sum_{i>j} i rho^{i+1} / (1 - |t| rho^{i+1}) with Re t <= 0.
        let tail = p * rho * ((jf + 1.0) - jf * rho) / ((1.0 - rho) * (1.0 - rho));
        if tail <= 1e-17 * sum.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    t * sum
}

/// Relative defect of the coefficient identity
/// `alpha'(1) (rho^{k-1} - 1) a_k = sum_j a_j a_{k-j} rho^{j+k-1} / (1 - rho^j)^2`
/// for `a_k = -c_k L^3 alpha'(1) xi^k`, with the common `xi^k` divided out.
pub fn coefficient_identity_residual(series: &ScaledSeries, alpha_prime: f64, k_max: usize) -> f64 {
    let rho = series.rho;
    let l = rho.ln();
    let l3 = l * l * l;
    let a = |k: usize| -series.c[k - 1] * l3 * alpha_prime;
    let mut worst = 0.0f64;
    for k in 2..=k_max.min(series.m) {
        let lhs = alpha_prime * (rho.powi(k as i32 - 1) - 1.0) * a(k);
        let mut rhs = 0.0;
        for j in 1..k {
            let d = 1.0 - rho.powi(j as i32);
            rhs += a(j) * a(k - j) * rho.powi((j + k - 1) as i32) / (d * d);
        }
        let scale = lhs.abs().max(rhs.abs());
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    worst
}

/// `sum_i a_i / (rho^{-i} - z)` with `a_i = -c_i L^3 alpha'(1) xi^i`, and a
/// bound on the omitted terms. Only sensible while `rho xi` is moderate.
pub fn meromorphic_alpha(series: &ScaledSeries, z: f64) -> Result<(f64, f64)> {
    let (xi, ap) = series
        .xi
        .zip(series.alpha_prime)
        .ok_or_else(|| Error::InvalidInput("series not calibrated".into()))?;
    let rho = series.rho;
    if !(z.abs() < 1.0 / rho) {
        return Err(Error::Domain(format!("z = {z} must satisfy |z| < 1/rho")));
    }
    let l = rho.ln();
    let pref = -l * l * l * ap;
    let ln_rx = (rho * xi).ln();
    let terms: Vec<f64> = (1..=series.m)
        .map(|i| {
            let ri = rho.powi(i as i32);
            let mag = (series.ln_abs_at(i) + i as f64 * ln_rx).exp();
            pref * series.c[i - 1].signum() * mag / (1.0 - ri * z)
        })
        .collect();
    let sum: f64 = terms.iter().sum();
    let n = terms.len();
    let q = (terms[n - 1] / terms[n - 2]).abs();
    if !(q < 1.0) {
        return Err(Error::Truncation("residue series not yet decaying at M".into()));
    }
    Ok((sum, terms[n - 1].abs() * q / (1.0 - q)))
}

impl ScaledSeries {
    fn ln_abs_at(&self, k: usize) -> f64 {
        if self.ln_abs.len() == self.c.len() {
            self.ln_abs[k - 1]
        } else {
            self.c[k - 1].abs().ln()
        }
    }
}

/// `r_k` with `c_k = (L^3)^{k-1} r_k`, exact for rational `rho`.
pub fn rational_skeleton(rho: &BigRational, m: usize) -> Result<Vec<BigRational>> {
    if !(rho.is_positive() && *rho < BigRational::one()) {
        return Err(Error::InvalidInput(format!("rational load {rho} must lie in (0, 1)")));
    }
    let one = BigRational::one();
    let mut pw = vec![one.clone()];
    for j in 1..=2 * m {
        pw.push(&pw[j - 1] * rho);
    }
    let mut r: Vec<BigRational> = vec![BigRational::zero(), one.clone()];
    for k in 2..=m {
        let mut s = BigRational::zero();
        for j in 1..k {
            let d = &one - &pw[j];
            s += &r[j] * &r[k - j] * &pw[j + k - 1] / (&d * &d);
        }
        r.push(s / (&one - &pw[k - 1]));
    }
    r.remove(0);
    Ok(r)
}

/// Largest relative gap between the floating coefficients and the exact
/// skeleton scaled by powers of `L^3`.
pub fn rational_float_gap(series: &ScaledSeries, rho: &BigRational, m: usize) -> Result<f64> {
    let r = rational_skeleton(rho, m.min(series.m))?;
    let l = series.rho.ln();
    let ln_l3 = 3.0 * l.abs().ln();
    let mut worst = 0.0f64;
    for (i, rk) in r.iter().enumerate() {
        let ln_exact = (i as f64) * ln_l3 + ln_abs_rational(rk);
        let sign_exact = if rk.is_negative() { -1.0 } else { 1.0 } * if i % 2 == 1 { -1.0 } else { 1.0 };
        let got = series.c[i];
        if got == 0.0 {
            continue;
        }
        if got.signum() != sign_exact {
            return Ok(f64::INFINITY);
        }
        worst = worst.max((series.ln_abs_at(i + 1) - ln_exact).exp_m1().abs());
    }
    Ok(worst)
}

fn ln_abs_rational(q: &BigRational) -> f64 {
    ln_abs_bigint(q.numer()) - ln_abs_bigint(q.denom())
}

fn ln_abs_bigint(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits < 1000 {
        n.abs().to_f64().unwrap_or(f64::INFINITY).ln()
    } else {
        let shift = bits - 900;
        let top: BigInt = n.abs() >> shift;
        top.to_f64().unwrap_or(f64::INFINITY).ln() + shift as f64 * std::f64::consts::LN_2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_coefficients() {
        let s = scaled_coefficients(0.5, 10, Precision::Standard).unwrap();
        let l = 0.5f64.ln();
        assert_eq!(s.c[0], 1.0);
        assert_relative_eq!(s.c[1], 0.25 * l * l * l / 0.125, max_relative = 1e-15);
        assert_relative_eq!(s.c[1], -0.6660493039778589, max_relative = 1e-14);
    }

    #[test]
    fn third_coefficient_by_hand() {
        let rho: f64 = 0.7;
        let s = scaled_coefficients(rho, 5, Precision::Standard).unwrap();
        let l3 = rho.ln().powi(3);
        let w1 = rho / (1.0 - rho).powi(2);
        let w2 = rho * rho / (1.0 - rho * rho).powi(2);
        let c2 = l3 * rho * w1 / (1.0 - rho);
        let c3 = l3 * rho * rho * (c2 * w1 + c2 * w2) / (1.0 - rho * rho);
        assert_relative_eq!(s.c[1], c2, max_relative = 1e-14);
        assert_relative_eq!(s.c[2], c3, max_relative = 1e-14);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(scaled_coefficients(1.0, 10, Precision::Standard).is_err());
        assert!(scaled_coefficients(0.0, 10, Precision::Standard).is_err());
        assert!(scaled_coefficients(0.5, 1, Precision::Standard).is_err());
    }

    #[test]
    fn f64_coefficients_stop_before_underflow() {
        let s = scaled_coefficients(0.3, 400, Precision::Standard).unwrap();
        assert!(s.m < 400);
        assert!(s.c.iter().all(|v| *v != 0.0));
        let e = scaled_coefficients(0.3, 400, Precision::extended()).unwrap();
        assert_eq!(e.m, 400);
    }

    #[test]
    fn ladder_matches_series_inside_disk() {
        let s = scaled_coefficients(0.5, 200, Precision::Standard).unwrap();
        let k = s.kernel::<f64>(53).unwrap();
        for x in [1.5, 2.5, 3.5, 5.0] {
            let lad = k.eval(&x).c;
            let ser = horner(&s.c, &x);
            assert_relative_eq!(lad, ser, max_relative = 1e-11, epsilon = 1e-14);
        }
    }

    #[test]
    fn base_sums_match_direct_sums() {
        let rho: f64 = 0.6;
        let s = scaled_coefficients(rho, 200, Precision::Standard).unwrap();
        let k = s.kernel::<f64>(53).unwrap();
        let b = 0.8;
        let r = k.rung0(b);
        let mut sd = 0.0;
        let mut td = 0.0;
        for i in 1..400 {
            let ri = rho.powi(i);
            td += ri * horner(&s.c, &(b * ri));
            sd += i as f64 * ri * rho * horner(&s.c, &(b * ri * rho));
        }
        assert_relative_eq!(r.t, td, max_relative = 1e-13);
        assert_relative_eq!(r.s, sd, max_relative = 1e-13);
    }

    #[test]
    fn xi_at_half_load() {
        let mut s = auto_coefficients(0.5, Precision::Standard).unwrap();
        let r = find_xi(&mut s).unwrap();
        assert_relative_eq!(r.xi, 3.963737192022, max_relative = 1e-10);
        assert!(r.zero_residual < 1e-12);
        assert!(r.anchoring.abs() < 1e-12);
        assert!(r.doubling_shift < 1e-8);
    }

    #[test]
    fn f_forms_agree_at_minus_one() {
        let v = evaluate_f(Complex64::new(-1.0, 0.0), 0.5).unwrap();
        let a = v.power_form.unwrap();
        let b = v.pole_form.unwrap();
        assert!((a - b).norm() < 1e-12);
        assert_relative_eq!(a.re, -0.90569092427116, max_relative = 1e-12);
        assert_eq!(evaluate_f(Complex64::zero(), 0.5).unwrap().value(), Complex64::zero());
        assert!(evaluate_f(Complex64::new(5.0, 0.0), 0.5).is_err());
    }

    #[test]
    fn functional_residual_at_origin_and_one() {
        let s = auto_coefficients(0.5, Precision::Standard).unwrap();
        let r0 = functional_residual(&s, Complex64::zero(), 50).unwrap();
        assert_eq!(r0.residual, 0.0);
        let r1 = functional_residual(&s, Complex64::new(1.0, 0.0), 80).unwrap();
        assert!(r1.residual < 1e-10, "{r1:?}");
        assert!(functional_residual(&s, Complex64::new(1e6, 0.0), 80).is_err());
    }

    #[test]
    fn rational_skeleton_matches_floats() {
        let rho = BigRational::new(1.into(), 2.into());
        let r = rational_skeleton(&rho, 3).unwrap();
        // r_2 = rho^2 / (1 - rho)^3 = 2
        assert_eq!(r[1], BigRational::from_integer(2.into()));
        let s = scaled_coefficients(0.5, 30, Precision::Standard).unwrap();
        assert!(rational_float_gap(&s, &rho, 30).unwrap() < 1e-13);
    }
}
