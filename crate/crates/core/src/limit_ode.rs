//! The `rho = 1` limit: `z c' = -c v`, `(z v')' = c`, `c(0) = 1`, `v(0) = 0`,
//! `v'(0) = 1`.
//!
//! Integration runs in `y = ln z` on the state `(l, v, P, E)` with
//! `l = ln c`, `P = z v'` and `E = z c`:
//! `l' = -v`, `v' = P`, `P' = E`, `E' = E (1 - v)`.
//! A Taylor method of high order advances the state; its polynomials double
//! as dense output. The start at small `z0` comes from the exact power series.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::precision::{Big, Precision, Real};

/// Exact power-series coefficients `c = sum gamma_n z^n`, `v = sum v_n z^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSeed {
    pub gamma: Vec<BigRational>,
    pub v: Vec<BigRational>,
}

/// `n gamma_n = -[c v]_n` and `n^2 v_n = gamma_{n-1}`, to `z^order`.
pub fn series_seed(order: usize) -> Result<SeriesSeed> {
    if order < 3 {
        return Err(Error::InvalidInput(format!("seed order {order} must be >= 3")));
    }
    let mut gamma = vec![BigRational::from_integer(1.into())];
    let mut v = vec![BigRational::zero(), BigRational::from_integer(1.into())];
    for n in 1..=order {
        let mut s = BigRational::zero();
        for i in 0..n {
            s += &gamma[i] * &v[n - i];
        }
        gamma.push(-s / BigRational::from_integer(n.into()));
        let m = n + 1;
        if m <= order {
            v.push(&gamma[n] / BigRational::from_integer((m * m).into()));
        }
    }
    Ok(SeriesSeed { gamma, v })
}

impl SeriesSeed {
    pub fn gamma_f64(&self) -> Vec<f64> {
        self.gamma.iter().map(|q| q.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn v_f64(&self) -> Vec<f64> {
        self.v.iter().map(|q| q.to_f64().unwrap_or(f64::NAN)).collect()
    }

    fn coeff<R: Real>(q: &BigRational, like: &R) -> R {
        let n = like.parse_int(&q.numer().to_string()).expect("integer digits");
        let d = like.parse_int(&q.denom().to_string()).expect("integer digits");
        n / d
    }

    /// `(c, v, z v')` at `z` from the truncated series.
    fn eval<R: Real>(&self, z: &R) -> (R, R, R) {
        let mut c = z.zero_like();
        for g in self.gamma.iter().rev() {
            c = c * z.clone() + Self::coeff(g, z);
        }
        let mut v = z.zero_like();
        let mut p = z.zero_like();
        for (n, q) in self.v.iter().enumerate().rev() {
            let vn = Self::coeff(q, z);
            v = v * z.clone() + vn.clone();
            p = p * z.clone() + vn * z.lift(n as f64);
        }
        (c, v, p)
    }

    fn eval_f64(&self, z: f64) -> (f64, f64, f64) {
        let g = self.gamma_f64();
        let vv = self.v_f64();
        let c = g.iter().rev().fold(0.0, |a, k| a * z + k);
        let v = vv.iter().rev().fold(0.0, |a, k| a * z + k);
        let p = vv.iter().enumerate().rev().fold(0.0, |a, (n, k)| a * z + n as f64 * k);
        (c, v, p)
    }

    /// `int_0^z c` and `int_0^z ln(w) c(w) dw` from the series.
    fn moments_f64(&self, z: f64) -> (f64, f64) {
        let lz = z.ln();
        let mut i0 = 0.0;
        let mut i1 = 0.0;
        for (k, g) in self.gamma_f64().iter().enumerate() {
            let k1 = (k + 1) as f64;
            let zk = z.powi(k as i32 + 1);
            i0 += g * zk / k1;
            i1 += g * zk * (lz / k1 - 1.0 / (k1 * k1));
        }
        (i0, i1)
    }

    /// Bound on the omitted series terms at `|z|`, from the last ratio.
    fn tail_bound(&self, z: f64) -> f64 {
        let g = self.gamma_f64();
        let n = g.len();
        let q = (g[n - 1] / g[n - 2]).abs() * z;
        if q >= 1.0 {
            return f64::INFINITY;
        }
        (g[n - 1] * z.powi(n as i32 - 1)).abs() * q / (1.0 - q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    /// Start of the numerical integration; below it the series is used.
    pub z0: f64,
    /// Initial end of integration, extended by decades until `z v'` settles.
    pub z_max: f64,
    /// Bound on the change of `z v'` over the last decade, and local error target.
    pub tol: f64,
    /// Order of the Taylor method.
    pub order: usize,
    pub seed_order: usize,
    pub precision: Precision,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions {
            z0: 1e-3,
            z_max: 1e5,
            tol: 1e-12,
            order: 24,
            seed_order: 30,
            precision: Precision::Standard,
        }
    }
}

/// One accepted Taylor step: `x_i(y0 + s) = sum_n coef[i][n] s^n` for `0 <= s <= h`.
#[derive(Clone, Debug)]
struct Segment {
    y0: f64,
    h: f64,
    coef: [Vec<f64>; 4],
}

impl Segment {
    fn eval(&self, i: usize, s: f64) -> f64 {
        self.coef[i].iter().rev().fold(0.0, |a, k| a * s + k)
    }
}

/// Least-squares fit of the large-`z` behaviour.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailFit {
    /// `ln c ~ -half_a ln^2 z + b ln z + k`.
    #[serde(rename = "halfA")]
    pub half_a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub k: f64,
    /// Coefficient of `ln z / z^2` when that term improved the fit.
    #[serde(rename = "D")]
    pub d: Option<f64>,
    /// `v ~ a_v ln z + b_v`.
    pub a_v: f64,
    pub b_v: f64,
    pub rms_c: f64,
    pub rms_v: f64,
    pub ln_z_range: (f64, f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitSolution {
    pub z0: f64,
    pub z_max: f64,
    pub grid: Vec<f64>,
    pub c_vals: Vec<f64>,
    pub v_vals: Vec<f64>,
    pub vprime_vals: Vec<f64>,
    /// `int_0^inf c`.
    #[serde(rename = "A")]
    pub a: f64,
    /// `lim z v'(z)`.
    pub a_slope: f64,
    pub a_rel_gap: f64,
    /// `int_0^inf ln(x) c(x) dx`.
    pub dcds: f64,
    /// `max |z v' - int_0^z c|` over accepted steps.
    pub conservation: f64,
    pub tail: TailFit,
    pub gamma: Vec<f64>,
    pub v_series: Vec<f64>,
    pub steps: usize,
    pub precision: Precision,
    #[serde(skip)]
    segments: Vec<Segment>,
    #[serde(skip)]
    seed: Option<SeriesSeed>,
}

/// `c*(1)` and `dc*/ds(1)` with error bounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MellinData {
    pub cstar1: f64,
    pub dcds1: f64,
    pub cstar1_err: f64,
    pub dcds1_err: f64,
}

fn taylor<R: Real>(x0: &[R; 4], order: usize) -> [Vec<R>; 4] {
    let z = x0[0].zero_like();
    let mut l = vec![x0[0].clone()];
    let mut v = vec![x0[1].clone()];
    let mut p = vec![x0[2].clone()];
    let mut e = vec![x0[3].clone()];
    for n in 0..order {
        let k = z.lift((n + 1) as f64);
        let mut ev = z.clone();
        for i in 0..=n {
            ev += e[i].clone() * v[n - i].clone();
        }
        l.push(-(v[n].clone()) / k.clone());
        v.push(p[n].clone() / k.clone());
        p.push(e[n].clone() / k.clone());
        e.push((e[n].clone() - ev) / k);
    }
    [l, v, p, e]
}

fn poly_at<R: Real>(c: &[R], s: &R) -> R {
    c.iter().rev().fold(s.zero_like(), |a, k| a * s.clone() + k.clone())
}

struct Integration {
    segments: Vec<Segment>,
}

/// Integrates from `y0` to `y1`; returns the accepted steps in `f64`.
fn integrate<R: Real>(x0: [R; 4], y0: f64, y1: f64, opts: &LimitOptions) -> Result<Integration> {
    let p = opts.order;
    let eps = opts.tol.min(1e-14).max(x0[0].epsilon());
    let h_max: f64 = 0.25;
    let mut y = y0;
    let mut x = x0;
    let mut segments = Vec::new();
    while y < y1 {
        let coef = taylor(&x, p);
        let norm = |n: usize| {
            (0..4)
                .map(|i| coef[i][n].abs().to_f64() / x[i].abs().to_f64().max(1.0))
                .fold(0.0f64, f64::max)
        };
        let mut h = h_max;
        for n in [p - 1, p] {
            let nn = norm(n);
            if nn > 0.0 {
                h = h.min((eps / nn).powf(1.0 / n as f64));
            }
        }
        h *= 0.9;
        if h < 1e-10 {
            return Err(Error::Precision(format!(
                "step size {h:.2e} at ln z = {y:.4}; the system is too stiff for {} bits",
                x[0].bits()
            )));
        }
        if y + h > y1 {
            h = y1 - y;
        }
        let hr = x[0].lift(h);
        let next: [R; 4] = std::array::from_fn(|i| poly_at(&coef[i], &hr));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence(format!("state not finite at ln z = {y:.4}")));
        }
        segments.push(Segment {
            y0: y,
            h,
            coef: std::array::from_fn(|i| coef[i].iter().map(|v| v.to_f64()).collect()),
        });
        x = next;
        y += h;
    }
    Ok(Integration { segments })
}

fn start_state<R: Real>(seed: &SeriesSeed, z0: f64, bits: u32) -> [R; 4] {
    let z = R::with_bits(z0, bits);
    let (c, v, p) = seed.eval(&z);
    [c.ln(), v, p, z * c]
}

const GL_NODES: usize = 20;

fn gauss(n: usize) -> GaussLegendre {
    GaussLegendre::new(NonZeroUsize::new(n).expect("positive node count"))
}

impl LimitSolution {
    fn segment_at(&self, y: f64) -> Option<&Segment> {
        let i = self.segments.partition_point(|s| s.y0 <= y);
        if i == 0 {
            return None;
        }
        let s = &self.segments[i - 1];
        (y <= s.y0 + s.h * (1.0 + 1e-12)).then_some(s)
    }

    pub fn y0(&self) -> f64 {
        self.z0.ln()
    }

    pub fn y_max(&self) -> f64 {
        self.z_max.ln()
    }

    /// `(ln c, v, z v', z c)` at `y = ln z`; the series covers `z < z0`.
    pub fn state(&self, y: f64) -> Result<[f64; 4]> {
        if y < self.y0() {
            let z = y.exp();
            let seed = self.seed.as_ref().expect("seed retained");
            if seed.tail_bound(z) > 1e-15 {
                return Err(Error::Domain(format!("z = {z} outside the seed disk")));
            }
            let (c, v, p) = seed.eval_f64(z);
            return Ok([c.ln(), v, p, z * c]);
        }
        let seg = self
            .segment_at(y)
            .ok_or_else(|| Error::Domain(format!("ln z = {y} beyond the solved range")))?;
        let s = y - seg.y0;
        Ok(std::array::from_fn(|i| seg.eval(i, s)))
    }

    pub fn c(&self, z: f64) -> Result<f64> {
        Ok(self.state(z.ln())?[0].exp())
    }

    pub fn v(&self, z: f64) -> Result<f64> {
        Ok(self.state(z.ln())?[1])
    }

    /// `dv/dz`.
    pub fn vprime(&self, z: f64) -> Result<f64> {
        Ok(self.state(z.ln())?[2] / z)
    }

    /// `int_{z0}^{z} c` and `int_{z0}^{z} ln(w) c dw` by Gauss-Legendre on
    /// `exp(l + y)` over each step, split into `panels` pieces.
    fn moments_between(&self, y_end: f64, nodes: usize, panels: usize) -> (f64, f64) {
        let gl = gauss(nodes);
        let mut i0 = 0.0;
        let mut i1 = 0.0;
        for seg in &self.segments {
            if seg.y0 >= y_end {
                break;
            }
            let top = (seg.h).min(y_end - seg.y0);
            let w = top / panels as f64;
            for k in 0..panels {
                let a = k as f64 * w;
                i0 += gl.integrate(a, a + w, |s| (seg.eval(0, s) + seg.y0 + s).exp());
                i1 += gl.integrate(a, a + w, |s| (seg.y0 + s) * (seg.eval(0, s) + seg.y0 + s).exp());
            }
        }
        (i0, i1)
    }

    /// Cumulative `int_0^z c` and `int_0^z ln(w) c(w) dw`.
    pub fn partial_moments(&self, z: f64) -> Result<(f64, f64)> {
        let seed = self.seed.as_ref().expect("seed retained");
        if z <= self.z0 {
            return Ok(seed.moments_f64(z));
        }
        if z > self.z_max * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("z = {z} beyond the solved range")));
        }
        let (s0, s1) = seed.moments_f64(self.z0);
        let (i0, i1) = self.moments_between(z.ln(), GL_NODES, 1);
        Ok((s0 + i0, s1 + i1))
    }

    fn tail_integrals(&self) -> (f64, f64) {
        // exp(-(a/2) y^2 + beta y + k) over [Y, inf), beta = b + 1 for dz = e^y dy.
        let a = 2.0 * self.tail.half_a;
        let beta = self.tail.b + 1.0;
        let y = self.y_max();
        let g = |t: f64| -0.5 * a * t * t + beta * t + self.tail.k;
        let mu = beta / a;
        let arg = (a / 2.0).sqrt() * (y - mu);
        let i0 = (g(mu)).exp() * (std::f64::consts::PI / (2.0 * a)).sqrt() * erfc(arg);
        let i1 = (beta * i0 + g(y).exp()) / a;
        (i0, i1)
    }
}

/// Solves the limit system, extending `z_max` by decades until `z v'`
/// changes by less than `tol` over the last one.
pub fn solve_limit_system(opts: &LimitOptions) -> Result<LimitSolution> {
    if !(opts.z0 > 0.0 && opts.z0 < 0.5) {
        return Err(Error::InvalidInput(format!("z0 = {} must lie in (0, 0.5)", opts.z0)));
    }
    if !(opts.z_max >= 1e3 && opts.z_max.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "z_max = {} must be >= 1e3 so that two decades beyond z = 10 are solved",
            opts.z_max
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    if opts.order < 8 {
        return Err(Error::InvalidInput(format!("Taylor order {} must be >= 8", opts.order)));
    }
    match opts.precision {
        Precision::Standard => match solve_with::<f64>(opts, 53) {
            Err(Error::Precision(msg)) => {
                log::warn!("{msg}; retrying in extended precision");
                solve_with::<Big>(opts, Precision::DEFAULT_EXTENDED_BITS)
            }
            other => other,
        },
        Precision::Extended { bits } => solve_with::<Big>(opts, bits),
    }
}

fn solve_with<R: Real>(opts: &LimitOptions, bits: u32) -> Result<LimitSolution> {
    let seed = series_seed(opts.seed_order)?;
    let y0 = opts.z0.ln();
    if seed.tail_bound(opts.z0) > 1e-17 {
        return Err(Error::InvalidInput(format!(
            "seed of order {} is not accurate at z0 = {}",
            opts.seed_order, opts.z0
        )));
    }
    let x0: [R; 4] = start_state(&seed, opts.z0, bits);
    let mut z_max = opts.z_max;
    let decade = std::f64::consts::LN_10;
    let mut sol = loop {
        let run = integrate(x0.clone(), y0, z_max.ln(), opts)?;
        let mut sol = LimitSolution {
            z0: opts.z0,
            z_max,
            grid: vec![],
            c_vals: vec![],
            v_vals: vec![],
            vprime_vals: vec![],
            a: f64::NAN,
            a_slope: f64::NAN,
            a_rel_gap: f64::NAN,
            dcds: f64::NAN,
            conservation: f64::NAN,
            tail: TailFit {
                half_a: f64::NAN,
                b: f64::NAN,
                k: f64::NAN,
                d: None,
                a_v: f64::NAN,
                b_v: f64::NAN,
                rms_c: f64::NAN,
                rms_v: f64::NAN,
                ln_z_range: (f64::NAN, f64::NAN),
            },
            gamma: seed.gamma_f64(),
            v_series: seed.v_f64(),
            steps: run.segments.len(),
            precision: if bits <= 53 {
                Precision::Standard
            } else {
                Precision::Extended { bits }
            },
            segments: run.segments,
            seed: Some(seed.clone()),
        };
        let ym = z_max.ln();
        let change = sol.state(ym)?[2] - sol.state(ym - decade)?[2];
        if change.abs() < opts.tol {
            break sol;
        }
        if z_max > 1e12 {
            sol.a_slope = sol.state(ym)?[2];
            return Err(Error::NonConvergence(format!(
                "z v' still moves by {change:.2e} over the decade ending at z = {z_max:.1e}"
            )));
        }
        z_max *= 10.0;
    };

    sol.conservation = conservation_defect(&sol);
    sol.tail = fit_tail(&sol)?;
    let m = mellin_moments(&sol)?;
    let (t0, _) = sol.tail_integrals();
    sol.a = m.cstar1;
    sol.dcds = m.dcds1;
    sol.a_slope = sol.state(sol.y_max())?[2] + t0;
    sol.a_rel_gap = (sol.a - sol.a_slope).abs() / sol.a;

    let n = 1000;
    let (ya, yb) = (sol.y0(), sol.y_max());
    for i in 0..=n {
        let y = ya + (yb - ya) * i as f64 / n as f64;
        let st = sol.state(y)?;
        let z = y.exp();
        sol.grid.push(z);
        sol.c_vals.push(st[0].exp());
        sol.v_vals.push(st[1]);
        sol.vprime_vals.push(st[2] / z);
    }
    if sol.a_rel_gap > 0.01 {
        return Err(Error::NonConvergence(format!(
            "A estimators disagree: int c = {:.10}, lim z v' = {:.10}",
            sol.a, sol.a_slope
        )));
    }
    Ok(sol)
}

/// `max |z v'(z) - int_0^z c|` over the step end points.
fn conservation_defect(sol: &LimitSolution) -> f64 {
    let gl = gauss(GL_NODES);
    let seed = sol.seed.as_ref().expect("seed retained");
    let mut acc = seed.moments_f64(sol.z0).0;
    let mut worst = (sol.segments[0].eval(2, 0.0) - acc).abs();
    for seg in &sol.segments {
        acc += gl.integrate(0.0, seg.h, |s| (seg.eval(0, s) + seg.y0 + s).exp());
        let p_end = seg.eval(2, seg.h);
        worst = worst.max((p_end - acc).abs());
    }
    worst
}

/// Least squares on the last two decades of the solved range.
pub fn fit_tail(sol: &LimitSolution) -> Result<TailFit> {
    let yb = sol.y_max();
    let ya = yb - 2.0 * std::f64::consts::LN_10;
    if ya < 10f64.ln() {
        return Err(Error::InvalidInput(format!(
            "tail fit needs two decades beyond z = 10; solved only to z = {:.3e}",
            sol.z_max
        )));
    }
    let n = 200;
    let ys: Vec<f64> = (0..n).map(|i| ya + (yb - ya) * i as f64 / (n - 1) as f64).collect();
    let states: Vec<[f64; 4]> = ys.iter().map(|y| sol.state(*y)).collect::<Result<_>>()?;
    let lc = DVector::from_iterator(n, states.iter().map(|s| s[0]));
    let vv = DVector::from_iterator(n, states.iter().map(|s| s[1]));

    let quad = DMatrix::from_fn(n, 3, |i, j| ys[i].powi(2 - j as i32));
    let (qc, rms_c) = lstsq(&quad, &lc)?;
    let with_d = DMatrix::from_fn(n, 4, |i, j| {
        if j < 3 {
            ys[i].powi(2 - j as i32)
        } else {
            ys[i] * (-2.0 * ys[i]).exp()
        }
    });
    let (qd, rms_d) = lstsq(&with_d, &lc)?;
    let lin = DMatrix::from_fn(n, 2, |i, j| ys[i].powi(1 - j as i32));
    let (qv, rms_v) = lstsq(&lin, &vv)?;
    let (coef, rms, d) = if rms_d < 0.9 * rms_c {
        (qd.clone(), rms_d, Some(qd[3]))
    } else {
        (qc, rms_c, None)
    };
    Ok(TailFit {
        half_a: -coef[0],
        b: coef[1],
        k: coef[2],
        d,
        a_v: qv[0],
        b_v: qv[1],
        rms_c: rms,
        rms_v,
        ln_z_range: (ya, yb),
    })
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    // Column scaling keeps the normal matrix well conditioned.
    let scales: Vec<f64> = a.column_iter().map(|c| c.norm().max(f64::MIN_POSITIVE)).collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = scaled.svd(true, true);
    let smin = svd.singular_values.min();
    let smax = svd.singular_values.max();
    if !(smin > 1e-12 * smax) {
        return Err(Error::InvalidInput("ill-conditioned tail fit; extend z_max".into()));
    }
    let x = svd
        .solve(b, 1e-14)
        .map_err(|e| Error::InvalidInput(format!("tail fit failed: {e}")))?;
    let x = DVector::from_iterator(x.len(), x.iter().zip(&scales).map(|(v, s)| v / s));
    let r = a * &x - b;
    Ok((x.clone(), (r.norm_squared() / b.len() as f64).sqrt()))
}

/// `c*(1) = int c` and `dc*/ds(1) = int ln(x) c(x) dx`, with error bounds
/// from halving the Gauss-Legendre rule and from the tail model.
pub fn mellin_moments(sol: &LimitSolution) -> Result<MellinData> {
    mellin_moments_refined(sol, 1)
}

/// As [`mellin_moments`] with every step split into `panels` pieces.
pub fn mellin_moments_refined(sol: &LimitSolution, panels: usize) -> Result<MellinData> {
    if !sol.tail.half_a.is_finite() || sol.tail.half_a <= 0.0 {
        return Err(Error::InvalidInput("tail model missing; extend z_max".into()));
    }
    let seed = sol.seed.as_ref().expect("seed retained");
    let (s0, s1) = seed.moments_f64(sol.z0);
    let yb = sol.y_max();
    let (i0, i1) = sol.moments_between(yb, GL_NODES, panels.max(1));
    let (h0, h1) = sol.moments_between(yb, GL_NODES / 2, panels.max(1));
    let (t0, t1) = sol.tail_integrals();
    let seed_err = seed.tail_bound(sol.z0) * sol.z0;
    let cstar1 = s0 + i0 + t0;
    let dcds1 = s1 + i1 + t1;
    if !(cstar1.is_finite() && dcds1.is_finite()) {
        return Err(Error::NonConvergence("Mellin moments are not finite".into()));
    }
    let ulp = 64.0 * f64::EPSILON * sol.steps as f64;
    Ok(MellinData {
        cstar1,
        dcds1,
        cstar1_err: (i0 - h0).abs() + t0.abs() + seed_err + ulp * cstar1.abs(),
        dcds1_err: (i1 - h1).abs() + t1.abs() + seed_err * sol.z0.ln().abs() + ulp * dcds1.abs(),
    })
}

/// `max |v(z) - (ln z int_0^z c - int_0^z ln(w) c(w) dw)|` over `zs`.
pub fn integral_form_residual(sol: &LimitSolution, zs: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &z in zs {
        let (i0, i1) = sol.partial_moments(z)?;
        let v = sol.v(z)?;
        worst = worst.max((v - (z.ln() * i0 - i1)).abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BlasiusResidual {
    /// `max |w''' + w w''|` with derivatives from the right-hand sides.
    pub chain_rule: f64,
    /// The same with central differences of step `fd_step` on `w`.
    pub finite_difference: f64,
    pub fd_step: f64,
}

/// Residual of `w''' + w w'' = 0` for `w(y) = v(e^y) - 1`.
pub fn blasius_residual(sol: &LimitSolution, y_grid: &[f64]) -> Result<BlasiusResidual> {
    shifted_blasius_residual(sol, y_grid, -1.0)
}

/// As [`blasius_residual`] for `w = v + shift`; any shift other than `-1`
/// leaves the residual `(shift + 1) z c`.
pub fn shifted_blasius_residual(sol: &LimitSolution, y_grid: &[f64], shift: f64) -> Result<BlasiusResidual> {
    let h = 1e-3;
    let mut chain = 0.0f64;
    let mut fd = 0.0f64;
    for &y in y_grid {
        if y + 2.0 * h > sol.y_max() {
            return Err(Error::Domain(format!("ln z = {y} beyond the solved range")));
        }
        let st = sol.state(y)?;
        let z = y.exp();
        let c = st[0].exp();
        let v = st[1];
        let p = st[2] / z; // dv/dz
        let dc = -c * v / z;
        let dp = (c - p) / z;
        let w = v + shift;
        let w1 = z * p;
        let w2 = w1 + z * z * dp;
        let ddp = (dc - dp) / z - (c - p) / (z * z);
        let w3 = z * p + 3.0 * z * z * dp + z * z * z * ddp;
        chain = chain.max((w3 + w * w2).abs());

        let wf = |t: f64| -> Result<f64> { Ok(sol.state(t)?[1] + shift) };
        let (m2, m1, c0, p1, p2) = (wf(y - 2.0 * h)?, wf(y - h)?, wf(y)?, wf(y + h)?, wf(y + 2.0 * h)?);
        let d2 = (p1 - 2.0 * c0 + m1) / (h * h);
        let d3 = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h);
        fd = fd.max((d3 + c0 * d2).abs());
    }
    Ok(BlasiusResidual {
        chain_rule: chain,
        finite_difference: fd,
        fd_step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn seed_low_orders_by_hand() {
        let s = series_seed(5).unwrap();
        assert_eq!(s.gamma[0], q(1, 1));
        assert_eq!(s.v[0], q(0, 1));
        assert_eq!(s.v[1], q(1, 1));
        assert_eq!(s.gamma[1], q(-1, 1));
        assert_eq!(s.v[2], q(-1, 4));
        assert_eq!(s.gamma[2], q(5, 8));
        assert_eq!(s.v[3], q(5, 72));
        assert_eq!(s.gamma[3], q(-17, 54));
        assert!(series_seed(2).is_err());
    }

    #[test]
    fn taylor_coefficients_match_the_right_hand_side() {
        let x = [0.1f64, 0.3, 0.7, 0.2];
        let c = taylor(&x, 3);
        assert_relative_eq!(c[0][1], -0.3);
        assert_relative_eq!(c[1][1], 0.7);
        assert_relative_eq!(c[2][1], 0.2);
        assert_relative_eq!(c[3][1], 0.2 * (1.0 - 0.3));
        // E'' = E'(1 - v) - E v'
        let e2 = 0.2 * 0.7 * (1.0 - 0.3) - 0.2 * 0.7;
        assert_relative_eq!(c[3][2], e2 / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn constant_solution_when_e_vanishes() {
        // E = 0 freezes P and leaves v linear, l quadratic.
        let x = [0.0f64, 1.0, 2.0, 0.0];
        let c = taylor(&x, 5);
        assert_eq!(c[3].iter().sum::<f64>(), 0.0);
        assert_relative_eq!(c[0][2], -1.0);
    }

    #[test]
    fn rejects_bad_options() {
        let o = LimitOptions {
            z_max: 50.0,
            ..LimitOptions::default()
        };
        assert!(solve_limit_system(&o).is_err());
        let o = LimitOptions {
            z0: 0.0,
            ..LimitOptions::default()
        };
        assert!(solve_limit_system(&o).is_err());
    }
}
