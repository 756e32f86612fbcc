//! Stationary mean-field law of a single link.
//!
//! The equilibrium is the probability sequence `alpha` satisfying
//! `alpha[k+1] * u[k+1] = rho * alpha_bar * alpha[k]` for every `k`, where
//! `u[k] = sum_l min(k, l) alpha[l]` and `alpha_bar` is the mean. The solver
//! regenerates `alpha` from the current `u` and `alpha_bar`, renormalises and
//! mixes with the previous iterate. Iterates are stored as `ln alpha` so the
//! tiny head of the modal heavy-traffic law never underflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::{Big, Precision, Real};

/// Load parameters of one link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub rho: f64,
    pub lambda: f64,
    pub v: f64,
}

impl SystemParams {
    pub fn new(lambda: f64, v: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("arrival intensity {lambda} must be >= 0")));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("mean volume {v} must be > 0")));
        }
        let rho = lambda * v;
        if rho >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "load rho = {rho} >= 1 admits no probabilistic equilibrium"
            )));
        }
        Ok(SystemParams { rho, lambda, v })
    }

    /// Unit mean volume, so `lambda == rho`.
    pub fn from_load(rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!("load rho = {rho} must lie in [0, 1)")));
        }
        SystemParams::new(rho, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mixing {
    /// `next = theta * regenerated + (1 - theta) * current`.
    Damped { theta: f64 },
    /// Anderson acceleration over the last `depth` residuals, `theta` as mixing weight.
    Anderson { depth: usize, theta: f64 },
}

impl Default for Mixing {
    fn default() -> Self {
        Mixing::Anderson {
            depth: 5,
            theta: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Bound on `sup_k |alpha[k+1] u[k+1] - rho alpha_bar alpha[k]| / alpha[k]`.
    pub tol: f64,
    pub k_max: usize,
    pub max_iter: usize,
    pub mixing: Mixing,
    pub precision: Precision,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            k_max: 400_000,
            max_iter: 50_000,
            mixing: Mixing::default(),
            precision: Precision::Standard,
        }
    }
}

/// Converged equilibrium, reported in `f64`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanFieldDistribution {
    pub rho: f64,
    /// Truncation index: entries `0..=k_trunc` are kept.
    pub k_trunc: usize,
    pub alpha: Vec<f64>,
    pub log_alpha: Vec<f64>,
    pub u: Vec<f64>,
    /// `d[l] = sum_{m >= l} (m - l) alpha[m] = alpha_bar - u[l]`.
    pub d: Vec<f64>,
    pub alpha_bar: f64,
    pub k_rho: f64,
    pub residual: f64,
    /// Upper bound on the probability mass beyond the truncation.
    pub tail_mass_bound: f64,
    pub iterations: usize,
    pub precision: Precision,
}

/// The two estimates of `K(rho) = lim alpha_k rho^{-k}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TailConstant {
    pub direct: f64,
    pub product: f64,
    pub rel_diff: f64,
}

/// Agreement required between the two tail-constant estimators.
pub const TAIL_CONSTANT_RTOL: f64 = 1e-8;
/// Agreement required for `rho * alpha_bar = alpha_1/alpha_0 - alpha_1`.
pub const IDENTITY_RTOL: f64 = 1e-10;

/// `u[k] = sum_l min(k, l) alpha[l]`, built from suffix sums so that no
/// subtraction takes place.
pub fn compute_u(alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidInput("empty probability sequence".into()));
    }
    if let Some((k, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a >= 0.0) || !a.is_finite()) {
        return Err(Error::InvalidInput(format!("alpha[{k}] = {a} is not a probability")));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("alpha sums to {total}, not 1")));
    }
    let suffix = suffix_sums(alpha);
    let mut u = Vec::with_capacity(alpha.len());
    u.push(0.0);
    let mut acc = 0.0;
    for s in suffix.iter().skip(1) {
        acc += s;
        u.push(acc);
    }
    Ok(u)
}

fn suffix_sums(alpha: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; alpha.len()];
    let mut acc = 0.0;
    for k in (0..alpha.len()).rev() {
        acc += alpha[k];
        s[k] = acc;
    }
    s
}

/// Solves the equilibrium equations at `params.rho`.
pub fn solve_mean_field(params: &SystemParams, opts: &SolverOptions) -> Result<MeanFieldDistribution> {
    let rho = params.rho;
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("load rho = {rho} must lie in [0, 1)")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    if rho == 0.0 {
        return Ok(MeanFieldDistribution {
            rho,
            k_trunc: 0,
            alpha: vec![1.0],
            log_alpha: vec![0.0],
            u: vec![0.0],
            d: vec![0.0],
            alpha_bar: 0.0,
            k_rho: 1.0,
            residual: 0.0,
            tail_mass_bound: 0.0,
            iterations: 0,
            precision: opts.precision,
        });
    }
    match opts.precision {
        Precision::Standard => {
            let out = iterate::<f64>(rho, opts, None);
            match out.status {
                Status::Converged => Ok(out.finish(rho, opts.precision)),
                status => Err(status.into_error(rho, &out)),
            }
        }
        Precision::Extended { bits } => {
            // f64 warm start up to its rounding floor, then refine.
            let warm_opts = SolverOptions {
                precision: Precision::Standard,
                ..*opts
            };
            let warm = iterate::<f64>(rho, &warm_opts, None);
            if let Status::Truncation = warm.status {
                return Err(warm.status.into_error(rho, &warm));
            }
            let start: Vec<Big> = warm.x.iter().map(|v| Big::new(*v, bits)).collect();
            let mut out = iterate::<Big>(rho, opts, Some(start));
            out.iterations += warm.iterations;
            match out.status {
                Status::Converged => Ok(out.finish(rho, opts.precision)),
                status => Err(status.into_error(rho, &out)),
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Status {
    Converged,
    MaxIter,
    Stalled,
    Truncation,
}

impl Status {
    fn into_error<R: Real>(self, rho: f64, out: &Outcome<R>) -> Error {
        let res = out.residual.to_f64();
        match self {
            Status::Converged => unreachable!("converged outcome is not an error"),
            Status::MaxIter => Error::NonConvergence(format!(
                "rho = {rho}: residual {res:.3e} after {} iterations (damping too aggressive or rho too close to 1)",
                out.iterations
            )),
            Status::Stalled => Error::NonConvergence(format!(
                "rho = {rho}: residual stalled at {res:.3e} after {} iterations; \
                 the {}-bit rounding floor is above the tolerance, use extended precision",
                out.iterations,
                out.x.first().map(|v| v.bits()).unwrap_or(53)
            )),
            Status::Truncation => Error::Truncation(format!(
                "rho = {rho}: the tail needs more than k_max entries (reached {})",
                out.x.len() - 1
            )),
        }
    }
}

struct Outcome<R: Real> {
    /// Normalised `ln alpha`.
    x: Vec<R>,
    residual: R,
    iterations: usize,
    status: Status,
}

/// Quantities derived from one iterate.
struct Sweep<R: Real> {
    alpha: Vec<R>,
    suffix: Vec<R>,
    u: Vec<R>,
    alpha_bar: R,
    residual: R,
    regenerated: Vec<R>,
}

fn log_sum_exp<R: Real>(x: &[R]) -> R {
    let m = x
        .iter()
        .fold(None::<R>, |acc, v| match acc {
            Some(a) if a >= *v => Some(a),
            _ => Some(v.clone()),
        })
        .expect("non-empty");
    let mut s = m.zero_like();
    for v in x {
        s += (v.clone() - m.clone()).exp();
    }
    m + s.ln()
}

fn normalise<R: Real>(x: &mut [R]) {
    let lse = log_sum_exp(x);
    for v in x.iter_mut() {
        *v -= lse.clone();
    }
}

fn sweep<R: Real>(x: &[R], rho: &R) -> Sweep<R> {
    let n = x.len();
    let alpha: Vec<R> = x.iter().map(|v| v.exp()).collect();
    let zero = rho.zero_like();
    let mut suffix = vec![zero.clone(); n];
    let mut acc = zero.clone();
    for k in (0..n).rev() {
        acc += alpha[k].clone();
        suffix[k] = acc.clone();
    }
    let mut u = Vec::with_capacity(n);
    u.push(zero.clone());
    let mut acc = zero.clone();
    for s in suffix.iter().skip(1) {
        acc += s.clone();
        u.push(acc.clone());
    }
    let alpha_bar = u[n - 1].clone();
    let drive = rho.clone() * alpha_bar.clone();

    let mut residual = zero.clone();
    for k in 0..n - 1 {
        let ratio = if alpha[k] > zero {
            alpha[k + 1].clone() / alpha[k].clone()
        } else {
            (x[k + 1].clone() - x[k].clone()).exp()
        };
        let r = (ratio * u[k + 1].clone() - drive.clone()).abs();
        if r > residual {
            residual = r;
        }
    }

    let mut regenerated = Vec::with_capacity(n);
    regenerated.push(zero.clone());
    for k in 0..n - 1 {
        let step = (drive.clone() / u[k + 1].clone()).ln();
        let next = regenerated[k].clone() + step;
        regenerated.push(next);
    }
    normalise(&mut regenerated);

    Sweep {
        alpha,
        suffix,
        u,
        alpha_bar,
        residual,
        regenerated,
    }
}

/// `epsilon` of the geometric tail bound, `(1 - rho) / 10`.
fn tail_epsilon(rho: f64) -> f64 {
    (1.0 - rho) / 10.0
}

/// Mass beyond the last kept entry under the ratio bound `rho / (1 - eps)`.
fn tail_mass_bound(last: f64, rho: f64) -> f64 {
    let r = rho / (1.0 - tail_epsilon(rho));
    last * r / (1.0 - r)
}

fn initial_length(rho: f64) -> usize {
    ((1e-18f64).ln() / rho.ln()).ceil().max(8.0) as usize + 1
}

fn extension_length(rho: f64) -> usize {
    ((1e-3f64).ln() / rho.ln()).ceil().max(16.0) as usize
}

/// Truncation is adequate once the last entry is negligible against the mode
/// and the bounded tail mass is below the tolerance.
fn truncation_ok<R: Real>(x: &[R], rho: f64, tol: f64) -> bool {
    let last = x[x.len() - 1].to_f64();
    let max = x.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    last - max < (1e-16f64).ln() && tail_mass_bound(last.exp(), rho) < tol
}

fn extend<R: Real>(x: &mut Vec<R>, rho: &R, extra: usize) {
    let ln_rho = rho.ln();
    let last = x[x.len() - 1].clone();
    for j in 1..=extra {
        x.push(last.clone() + ln_rho.clone() * last.lift(j as f64));
    }
    normalise(x);
}

fn iterate<R: Real>(rho_f: f64, opts: &SolverOptions, start: Option<Vec<R>>) -> Outcome<R> {
    let bits = opts.precision.bits();
    let rho = R::with_bits(rho_f, bits);
    let ln_rho = rho.ln();
    let mut x: Vec<R> = match start {
        Some(x) => x,
        None => {
            let n = initial_length(rho_f);
            let base = (rho.one_like() - rho.clone()).ln();
            (0..n)
                .map(|k| base.clone() + ln_rho.clone() * rho.lift(k as f64))
                .collect()
        }
    };
    normalise(&mut x);

    let (depth, theta) = match opts.mixing {
        Mixing::Damped { theta } => (0, theta),
        Mixing::Anderson { depth, theta } => (depth, theta),
    };
    let theta_r = rho.lift(theta);
    let mut hist_x: Vec<Vec<R>> = Vec::new();
    let mut hist_f: Vec<Vec<R>> = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_at = 0usize;
    let stall_window = 400usize;
    let mut residual = rho.lift(f64::INFINITY);

    for it in 0..opts.max_iter {
        let sw = sweep(&x, &rho);
        residual = sw.residual.clone();
        let res = residual.to_f64();
        let trunc_ok = truncation_ok(&x, rho_f, opts.tol);
        if res <= opts.tol && trunc_ok {
            return Outcome {
                x,
                residual,
                iterations: it,
                status: Status::Converged,
            };
        }
        if res < 0.5 * best {
            best = res;
            best_at = it;
        } else if it - best_at > stall_window && trunc_ok {
            return Outcome {
                x,
                residual,
                iterations: it,
                status: Status::Stalled,
            };
        }

        let f: Vec<R> = sw
            .regenerated
            .iter()
            .zip(&x)
            .map(|(g, xi)| g.clone() - xi.clone())
            .collect();
        let mut next: Vec<R> = if depth == 0 {
            // log of theta * exp(g) + (1 - theta) * exp(x)
            if theta >= 1.0 {
                sw.regenerated.clone()
            } else {
                let one_minus = theta_r.one_like() - theta_r.clone();
                sw.regenerated
                    .iter()
                    .zip(&sw.alpha)
                    .map(|(g, a)| (theta_r.clone() * g.exp() + one_minus.clone() * a.clone()).ln())
                    .collect()
            }
        } else {
            hist_x.push(x.clone());
            hist_f.push(f.clone());
            if hist_x.len() > depth + 1 {
                hist_x.remove(0);
                hist_f.remove(0);
            }
            anderson_step(&x, &f, &hist_x, &hist_f, &theta_r)
        };
        if next.iter().any(|v| !v.is_finite()) {
            // Rejected extrapolation: plain regeneration and fresh history.
            hist_x.clear();
            hist_f.clear();
            next = sw.regenerated.clone();
        }
        normalise(&mut next);
        x = next;

        if !truncation_ok(&x, rho_f, opts.tol) {
            if x.len() > opts.k_max {
                return Outcome {
                    x,
                    residual,
                    iterations: it,
                    status: Status::Truncation,
                };
            }
            let extra = extension_length(rho_f).min(opts.k_max + 1 - x.len().min(opts.k_max));
            extend(&mut x, &rho, extra.max(1));
            hist_x.clear();
            hist_f.clear();
        }
    }
    Outcome {
        x,
        residual,
        iterations: opts.max_iter,
        status: Status::MaxIter,
    }
}

/// Type-II Anderson update `x + theta f - (dX + theta dF) gamma`, with
/// `gamma` the least-squares fit of `dF gamma ~ f`.
fn anderson_step<R: Real>(x: &[R], f: &[R], hx: &[Vec<R>], hf: &[Vec<R>], theta: &R) -> Vec<R> {
    let m = hx.len().saturating_sub(1);
    let plain = || -> Vec<R> {
        x.iter()
            .zip(f)
            .map(|(a, b)| a.clone() + theta.clone() * b.clone())
            .collect()
    };
    if m == 0 {
        return plain();
    }
    let n = x.len();
    let df: Vec<Vec<R>> = (0..m)
        .map(|i| (0..n).map(|k| hf[i + 1][k].clone() - hf[i][k].clone()).collect())
        .collect();
    let dx: Vec<Vec<R>> = (0..m)
        .map(|i| (0..n).map(|k| hx[i + 1][k].clone() - hx[i][k].clone()).collect())
        .collect();
    let zero = x[0].zero_like();
    let dot = |a: &[R], b: &[R]| {
        let mut s = zero.clone();
        for (p, q) in a.iter().zip(b) {
            s += p.clone() * q.clone();
        }
        s
    };
    let mut gram = vec![vec![zero.clone(); m]; m];
    let mut rhs = vec![zero.clone(); m];
    for i in 0..m {
        for j in 0..=i {
            let g = dot(&df[i], &df[j]);
            gram[i][j] = g.clone();
            gram[j][i] = g;
        }
        rhs[i] = dot(&df[i], f);
    }
    // Tikhonov shift relative to the diagonal scale.
    let scale = (0..m).fold(zero.clone(), |acc, i| if gram[i][i] > acc { gram[i][i].clone() } else { acc });
    if !(scale > zero) {
        return plain();
    }
    let shift = scale.clone() * scale.lift(1e-14);
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += shift.clone();
    }
    let Some(gamma) = solve_small(gram, rhs) else {
        return plain();
    };
    (0..n)
        .map(|k| {
            let mut v = x[k].clone() + theta.clone() * f[k].clone();
            for i in 0..m {
                v -= gamma[i].clone() * (dx[i][k].clone() + theta.clone() * df[i][k].clone());
            }
            v
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_small<R: Real>(mut a: Vec<Vec<R>>, mut b: Vec<R>) -> Option<Vec<R>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if !(a[piv][col].abs() > a[piv][col].zero_like()) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col].clone() / a[col][col].clone();
            for k in col..n {
                let t = factor.clone() * a[col][k].clone();
                a[row][k] -= t;
            }
            let t = factor * b[col].clone();
            b[row] -= t;
        }
    }
    let mut out = vec![b[0].zero_like(); n];
    for row in (0..n).rev() {
        let mut s = b[row].clone();
        for k in row + 1..n {
            s -= a[row][k].clone() * out[k].clone();
        }
        out[row] = s / a[row][row].clone();
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

impl<R: Real> Outcome<R> {
    fn finish(self, rho: f64, precision: Precision) -> MeanFieldDistribution {
        let rho_r = self.x[0].lift(rho);
        let sw = sweep(&self.x, &rho_r);
        let n = self.x.len();
        // d[l] = sum_{j > l} suffix[j]
        let mut d = vec![0.0; n];
        let mut acc = rho_r.zero_like();
        for l in (0..n).rev() {
            d[l] = acc.to_f64();
            acc += sw.suffix[l].clone();
        }
        let log_alpha: Vec<f64> = self.x.iter().map(|v| v.to_f64()).collect();
        let alpha: Vec<f64> = sw.alpha.iter().map(|v| v.to_f64()).collect();
        let u: Vec<f64> = sw.u.iter().map(|v| v.to_f64()).collect();
        let alpha_bar = sw.alpha_bar.to_f64();
        let k_trunc = n - 1;
        let mut dist = MeanFieldDistribution {
            rho,
            k_trunc,
            alpha,
            log_alpha,
            u,
            d,
            alpha_bar,
            k_rho: f64::NAN,
            residual: sw.residual.to_f64(),
            tail_mass_bound: tail_mass_bound(self.x[k_trunc].to_f64().exp(), rho),
            iterations: self.iterations,
            precision,
        };
        dist.k_rho = dist.ln_tail_constant_product().exp();
        dist
    }
}

impl MeanFieldDistribution {
    /// `ln K` from `alpha_0 prod_l alpha_bar / (alpha_bar - d[l+1])`.
    pub fn ln_tail_constant_product(&self) -> f64 {
        if self.rho == 0.0 {
            return self.log_alpha[0];
        }
        let mut s = self.log_alpha[0];
        for l in 0..self.k_trunc {
            s -= (-self.d[l + 1] / self.alpha_bar).ln_1p();
        }
        s
    }

    /// `ln K` from `alpha_K rho^{-K}` with an Aitken correction for the
    /// geometrically vanishing remainder.
    pub fn ln_tail_constant_direct(&self) -> f64 {
        if self.rho == 0.0 {
            return self.log_alpha[0];
        }
        let ln_rho = self.rho.ln();
        let g = |k: usize| self.log_alpha[k] - k as f64 * ln_rho;
        let k = self.k_trunc;
        if k < 2 {
            return g(k);
        }
        let d1 = g(k) - g(k - 1);
        let d0 = g(k - 1) - g(k - 2);
        let denom = d1 - d0;
        if denom != 0.0 && d1.abs() < d0.abs() && d1 * d0 > 0.0 {
            g(k) - d1 * d1 / denom
        } else {
            g(k)
        }
    }

    pub fn tail_constant_estimates(&self) -> TailConstant {
        let lp = self.ln_tail_constant_product();
        let ld = self.ln_tail_constant_direct();
        TailConstant {
            direct: ld.exp(),
            product: lp.exp(),
            rel_diff: (ld - lp).abs(),
        }
    }

    /// `K(rho)`; fails when the two estimators disagree beyond `1e-8`.
    pub fn tail_constant(&self) -> Result<f64> {
        let t = self.tail_constant_estimates();
        if t.rel_diff > TAIL_CONSTANT_RTOL {
            return Err(Error::Truncation(format!(
                "rho = {}: K(rho) estimators disagree ({:.6e} vs {:.6e}, rel {:.2e}); increase the truncation",
                self.rho, t.direct, t.product, t.rel_diff
            )));
        }
        Ok(t.product)
    }

    /// Relative violation of `rho alpha_bar = alpha_1 / alpha_0 - alpha_1`.
    pub fn identity_residual(&self) -> f64 {
        if self.k_trunc == 0 {
            return 0.0;
        }
        let a1 = self.alpha[1];
        let ratio = (self.log_alpha[1] - self.log_alpha[0]).exp();
        let lhs = self.rho * self.alpha_bar;
        let rhs = ratio - a1;
        if lhs == 0.0 && rhs == 0.0 {
            0.0
        } else {
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
        }
    }

    /// `alpha'(1) = alpha_bar`, after checking the `k = 0` identity.
    pub fn alpha_prime_exact(&self) -> Result<f64> {
        let r = self.identity_residual();
        if r > IDENTITY_RTOL {
            return Err(Error::Invariant(format!(
                "rho = {}: rho*alpha_bar = alpha_1/alpha_0 - alpha_1 violated (rel {r:.2e}); fixed point not converged",
                self.rho
            )));
        }
        Ok(self.alpha_bar)
    }

    /// `alpha[k+1] / alpha[k]` computed from logarithms.
    pub fn ratio(&self, k: usize) -> f64 {
        (self.log_alpha[k + 1] - self.log_alpha[k]).exp()
    }

    /// Mean of the truncated law recomputed directly as `sum k alpha_k`.
    pub fn mean(&self) -> f64 {
        self.alpha.iter().enumerate().map(|(k, a)| k as f64 * a).sum()
    }

    /// Generating function `sum alpha_k z^k` on the truncated support.
    pub fn generating_function(&self, z: f64) -> f64 {
        self.alpha.iter().rev().fold(0.0, |acc, a| acc * z + a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn u_of_single_atoms() {
        let mut a = vec![0.0; 6];
        a[1] = 1.0;
        assert_eq!(compute_u(&a).unwrap(), vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let mut a = vec![0.0; 7];
        a[3] = 1.0;
        assert_eq!(compute_u(&a).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn u_of_geometric_matches_direct_sum() {
        let q: f64 = 0.5;
        let a: Vec<f64> = (0..80).map(|k| (1.0 - q) * q.powi(k)).collect();
        let u = compute_u(&a).unwrap();
        assert_relative_eq!(u[2], q * (1.0 + q), epsilon = 1e-15);
        for k in 0..10 {
            let brute: f64 = a.iter().enumerate().map(|(l, al)| (k.min(l)) as f64 * al).sum();
            assert_relative_eq!(u[k], brute, epsilon = 1e-14);
        }
    }

    #[test]
    fn u_rejects_bad_input() {
        assert!(compute_u(&[0.5, -0.1, 0.6]).is_err());
        assert!(compute_u(&[0.5, 0.2]).is_err());
        assert!(compute_u(&[]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::new(2.0, 0.5).is_err());
        assert!(SystemParams::new(-1.0, 0.5).is_err());
        assert!(SystemParams::new(1.0, 0.0).is_err());
        let p = SystemParams::new(0.4, 1.5).unwrap();
        assert_eq!(p.rho, 0.4 * 1.5);
        assert!(SystemParams::from_load(1.0).is_err());
    }

    #[test]
    fn zero_load_is_a_point_mass() {
        let d = solve_mean_field(&SystemParams::from_load(0.0).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(d.alpha, vec![1.0]);
        assert_eq!(d.alpha_bar, 0.0);
        assert_eq!(d.tail_constant().unwrap(), 1.0);
        assert_eq!(d.alpha_prime_exact().unwrap(), 0.0);
    }

    #[test]
    fn half_load_converges_with_both_mixers() {
        let p = SystemParams::from_load(0.5).unwrap();
        let a = solve_mean_field(&p, &SolverOptions::default()).unwrap();
        let damped = SolverOptions {
            mixing: Mixing::Damped { theta: 0.5 },
            ..SolverOptions::default()
        };
        let b = solve_mean_field(&p, &damped).unwrap();
        assert!(a.residual <= 1e-12 && b.residual <= 1e-12);
        assert_relative_eq!(a.alpha_bar, b.alpha_bar, max_relative = 1e-11);
        assert!(a.iterations < b.iterations);
    }

    #[test]
    fn tiny_tolerance_in_f64_reports_stall() {
        let p = SystemParams::from_load(0.9).unwrap();
        let opts = SolverOptions {
            tol: 1e-18,
            ..SolverOptions::default()
        };
        match solve_mean_field(&p, &opts) {
            Err(Error::NonConvergence(msg)) => assert!(msg.contains("extended"), "{msg}"),
            other => panic!("expected a stall, got {other:?}"),
        }
    }

    #[test]
    fn truncation_cap_is_reported() {
        let p = SystemParams::from_load(0.9).unwrap();
        let opts = SolverOptions {
            k_max: 50,
            ..SolverOptions::default()
        };
        assert!(matches!(solve_mean_field(&p, &opts), Err(Error::Truncation(_))));
    }

    #[test]
    fn max_iterations_is_reported() {
        let p = SystemParams::from_load(0.9).unwrap();
        let opts = SolverOptions {
            max_iter: 3,
            ..SolverOptions::default()
        };
        assert!(matches!(solve_mean_field(&p, &opts), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn solve_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve_small(a, vec![3.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(x[1], 1.4, epsilon = 1e-15);
        assert!(solve_small(vec![vec![0.0]], vec![1.0]).is_none());
    }
}
