//! Finite-`N` star network under min sharing: exact-jump simulation and a
//! stationary solve of the truncated chain for tiny instances.
//!
//! A connection on route `(i, j)` gets bandwidth `min(1/X_i, 1/X_j)`, where
//! `X_i` counts connections through link `i`; volumes are exponential with
//! mean `v`, so route `r` empties at rate `c_r min(1/X_i, 1/X_j) / v`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::meanfield::SystemParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub n_links: usize,
    pub n_in: usize,
    pub n_out: usize,
    /// Pairs of link indices.
    pub routes: Vec<(usize, usize)>,
    pub per_route_rate: f64,
}

impl Topology {
    /// `n/2` in-links by `n/2` out-links, every in/out pair a route, each
    /// with intensity `2 lambda / n` so that every link sees `lambda`.
    pub fn bipartite(n_links: usize, lambda: f64) -> Result<Self> {
        if n_links < 2 || !n_links.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "bipartite star needs an even number of links >= 2, got {n_links}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("arrival intensity {lambda} must be >= 0")));
        }
        let half = n_links / 2;
        let routes = (0..half)
            .flat_map(|i| (0..half).map(move |j| (i, half + j)))
            .collect();
        Ok(Topology {
            n_links,
            n_in: half,
            n_out: half,
            routes,
            per_route_rate: lambda / half as f64,
        })
    }

    /// Arbitrary routes over `n_links` links, all at one intensity.
    pub fn custom(n_links: usize, routes: Vec<(usize, usize)>, per_route_rate: f64) -> Result<Self> {
        if routes.is_empty() {
            return Err(Error::InvalidInput("topology without routes".into()));
        }
        if let Some(r) = routes.iter().find(|(i, j)| *i >= n_links || *j >= n_links || i == j) {
            return Err(Error::InvalidInput(format!("route {r:?} is not a pair of distinct links")));
        }
        if !(per_route_rate >= 0.0 && per_route_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("route intensity {per_route_rate} must be >= 0")));
        }
        Ok(Topology {
            n_links,
            n_in: n_links,
            n_out: n_links,
            routes,
            per_route_rate,
        })
    }

    /// Links `{0, 1, 2}`, routes `(0, 1)` and `(0, 2)` at `lambda / 2` each.
    pub fn tiny(lambda: f64) -> Result<Self> {
        Topology::custom(3, vec![(0, 1), (0, 2)], lambda / 2.0)
    }

    /// Routes through each link.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.n_links];
        for (r, &(i, j)) in self.routes.iter().enumerate() {
            inc[i].push(r);
            inc[j].push(r);
        }
        inc
    }

    /// Total arrival intensity seen by each link.
    pub fn link_rates(&self) -> Vec<f64> {
        self.incidence()
            .iter()
            .map(|rs| rs.len() as f64 * self.per_route_rate)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub counts: Vec<u32>,
    pub x: Vec<u32>,
    pub t: f64,
}

impl SimState {
    pub fn empty(topo: &Topology) -> Self {
        SimState {
            counts: vec![0; topo.routes.len()],
            x: vec![0; topo.n_links],
            t: 0.0,
        }
    }

    pub fn from_counts(topo: &Topology, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != topo.routes.len() {
            return Err(Error::InvalidInput("one count per route expected".into()));
        }
        let mut x = vec![0; topo.n_links];
        for (r, &(i, j)) in topo.routes.iter().enumerate() {
            x[i] += counts[r];
            x[j] += counts[r];
        }
        Ok(SimState { counts, x, t: 0.0 })
    }

    /// `X_i = sum_{r through i} c_r` for every link.
    pub fn is_consistent(&self, topo: &Topology) -> bool {
        SimState::from_counts(topo, self.counts.clone()).is_ok_and(|s| s.x == self.x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCatalogue {
    pub arrivals: Vec<f64>,
    pub departures: Vec<f64>,
    pub total: f64,
}

fn departure_rate(c: u32, xi: u32, xj: u32, v: f64) -> f64 {
    if c == 0 {
        return 0.0;
    }
    c as f64 / (xi.max(xj) as f64 * v)
}

pub fn transition_rates(state: &SimState, params: &SystemParams, topo: &Topology) -> RateCatalogue {
    let arrivals = vec![topo.per_route_rate; topo.routes.len()];
    let departures: Vec<f64> = topo
        .routes
        .iter()
        .enumerate()
        .map(|(r, &(i, j))| departure_rate(state.counts[r], state.x[i], state.x[j], params.v))
        .collect();
    let total = arrivals.iter().sum::<f64>() + departures.iter().sum::<f64>();
    RateCatalogue {
        arrivals,
        departures,
        total,
    }
}

/// Bandwidth used on each link; min sharing keeps every entry at most 1.
pub fn link_loads(state: &SimState, topo: &Topology) -> Vec<f64> {
    let mut load = vec![0.0; topo.n_links];
    for (r, &(i, j)) in topo.routes.iter().enumerate() {
        let c = state.counts[r];
        if c > 0 {
            let share = c as f64 / state.x[i].max(state.x[j]) as f64;
            load[i] += share;
            load[j] += share;
        }
    }
    load
}

/// Binary tree of partial sums whose internal nodes are always recomputed
/// from their children, so no rounding drift accumulates.
struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(n: usize) -> Self {
        let size = n.next_power_of_two().max(1);
        SumTree {
            size,
            nodes: vec![0.0; 2 * size],
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut k = i + self.size;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn leaf_sum(&self) -> f64 {
        self.nodes[self.size..].iter().sum()
    }

    /// Leaf whose cumulative interval contains `u` in `[0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        let mut leaf = k - self.size;
        // Rounding can land on an empty leaf at the right edge.
        while self.nodes[leaf + self.size] <= 0.0 && leaf > 0 {
            leaf -= 1;
        }
        leaf
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    pub seed: u64,
    /// Defaults to a fifth of the horizon.
    pub warmup: Option<f64>,
    pub batches: usize,
    /// Events between full recomputations of the rate totals.
    pub check_every: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: 1e4,
            seed: 1,
            warmup: None,
            batches: 20,
            check_every: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub topology: TopologySummary,
    pub rho: f64,
    pub seed: u64,
    pub horizon: f64,
    pub warmup: f64,
    /// Time-averaged occupancy law pooled over links, after warmup.
    pub empirical_alpha: Vec<f64>,
    pub alpha_bar_emp: f64,
    /// 95% half-widths from batch means, per level.
    pub ci: Vec<f64>,
    pub alpha_bar_ci: f64,
    pub n_events: u64,
    /// Largest TV distance between the histograms of two links.
    pub max_link_tv: f64,
    /// Largest bandwidth used on a link at the sampled events.
    pub max_link_load: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub n_links: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub n_routes: usize,
    pub per_route_rate: f64,
}

impl From<&Topology> for TopologySummary {
    fn from(t: &Topology) -> Self {
        TopologySummary {
            n_links: t.n_links,
            n_in: t.n_in,
            n_out: t.n_out,
            n_routes: t.routes.len(),
            per_route_rate: t.per_route_rate,
        }
    }
}

/// Time spent by each link at each level, per batch.
struct Occupancy {
    level: Vec<u32>,
    since: Vec<f64>,
    /// `time[batch][link][level]`
    time: Vec<Vec<Vec<f64>>>,
    batch: Option<usize>,
}

impl Occupancy {
    fn new(n_links: usize, batches: usize) -> Self {
        Occupancy {
            level: vec![0; n_links],
            since: vec![0.0; n_links],
            time: vec![vec![Vec::new(); n_links]; batches],
            batch: None,
        }
    }

    fn credit(&mut self, link: usize, until: f64) {
        if let Some(b) = self.batch {
            let lv = self.level[link] as usize;
            let row = &mut self.time[b][link];
            if row.len() <= lv {
                row.resize(lv + 1, 0.0);
            }
            row[lv] += until - self.since[link];
        }
        self.since[link] = until;
    }

    fn set_level(&mut self, link: usize, level: u32, t: f64) {
        self.credit(link, t);
        self.level[link] = level;
    }

    /// Closes every link at `t` and switches accounting to `batch`.
    fn boundary(&mut self, t: f64, batch: Option<usize>) {
        for link in 0..self.level.len() {
            self.credit(link, t);
        }
        self.batch = batch;
    }
}

fn normalise(h: &mut [f64]) {
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|x| *x /= s);
    }
}

fn mean(h: &[f64]) -> f64 {
    h.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

/// Total variation distance between two laws on `0, 1, 2, ...`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

pub fn simulate(params: &SystemParams, topo: &Topology, opts: &SimOptions) -> Result<SimSummary> {
    if !(params.rho < 1.0) {
        return Err(Error::InvalidInput(format!("load rho = {} must be < 1", params.rho)));
    }
    let warmup = opts.warmup.unwrap_or(0.2 * opts.horizon);
    if !(opts.horizon > warmup && warmup >= 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "horizon {} must exceed warmup {warmup}",
            opts.horizon
        )));
    }
    if opts.batches < 2 {
        return Err(Error::InvalidInput("at least two batches are needed for intervals".into()));
    }
    let inc = topo.incidence();
    let n_routes = topo.routes.len();
    let arrival_total = topo.per_route_rate * n_routes as f64;
    let v = params.v;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = SimState::empty(topo);
    let mut dep = SumTree::new(n_routes);
    let mut occ = Occupancy::new(topo.n_links, opts.batches);
    let batch_len = (opts.horizon - warmup) / opts.batches as f64;
    let mut next_boundary = warmup;
    let mut next_batch = 0usize;
    let mut n_events = 0u64;
    let mut max_load = 0.0f64;

    let refresh = |state: &SimState, dep: &mut SumTree, link: usize| {
        for &r in &inc[link] {
            let (i, j) = topo.routes[r];
            dep.set(r, departure_rate(state.counts[r], state.x[i], state.x[j], v));
        }
    };

    loop {
        let total = arrival_total + dep.total();
        if total <= 0.0 {
            // Nothing can happen: remain empty to the horizon.
            state.t = opts.horizon;
        } else {
            let u: f64 = rng.gen();
            state.t += -(1.0 - u).ln() / total;
        }
        while state.t >= next_boundary && next_batch <= opts.batches {
            let b = (next_batch < opts.batches).then_some(next_batch);
            occ.boundary(next_boundary.min(opts.horizon), b);
            next_batch += 1;
            next_boundary = warmup + next_batch as f64 * batch_len;
            if next_batch == opts.batches {
                next_boundary = opts.horizon;
            }
        }
        if state.t >= opts.horizon || total <= 0.0 {
            break;
        }
        let pick = rng.gen::<f64>() * total;
        let (r, delta) = if pick < arrival_total {
            (((pick / topo.per_route_rate) as usize).min(n_routes - 1), 1i64)
        } else {
            (dep.find(pick - arrival_total), -1i64)
        };
        if delta < 0 && state.counts[r] == 0 {
            return Err(Error::Invariant(format!("departure drawn on empty route {r}")));
        }
        let (i, j) = topo.routes[r];
        state.counts[r] = (state.counts[r] as i64 + delta) as u32;
        for link in [i, j] {
            state.x[link] = (state.x[link] as i64 + delta) as u32;
            occ.set_level(link, state.x[link], state.t);
        }
        refresh(&state, &mut dep, i);
        refresh(&state, &mut dep, j);
        n_events += 1;

        if n_events.is_multiple_of(997) {
            for link in [i, j] {
                let mut load = 0.0;
                for &rr in &inc[link] {
                    let (a, b) = topo.routes[rr];
                    if state.counts[rr] > 0 {
                        load += state.counts[rr] as f64 / state.x[a].max(state.x[b]) as f64;
                    }
                }
                max_load = max_load.max(load);
                if load > 1.0 + 1e-12 {
                    return Err(Error::Invariant(format!("link {link} uses bandwidth {load}")));
                }
            }
        }
        if n_events.is_multiple_of(opts.check_every) {
            let fresh = dep.leaf_sum();
            let scale = fresh.abs().max(1e-300);
            if (dep.total() - fresh).abs() / scale > 1e-9 {
                return Err(Error::Invariant(format!(
                    "departure rate total drifted: {} vs {fresh}",
                    dep.total()
                )));
            }
            if !state.is_consistent(topo) {
                return Err(Error::Invariant("link totals out of step with route counts".into()));
            }
        }
    }

    summarise(params, topo, opts, warmup, occ, n_events, max_load)
}

fn summarise(
    params: &SystemParams,
    topo: &Topology,
    opts: &SimOptions,
    warmup: f64,
    occ: Occupancy,
    n_events: u64,
    max_load: f64,
) -> Result<SimSummary> {
    let width = occ
        .time
        .iter()
        .flat_map(|b| b.iter().map(|l| l.len()))
        .max()
        .unwrap_or(1)
        .max(1);
    let pad = |v: &Vec<f64>| {
        let mut out = v.clone();
        out.resize(width, 0.0);
        out
    };
    let mut pooled = vec![0.0; width];
    let mut per_link = vec![vec![0.0; width]; topo.n_links];
    let mut batch_laws = Vec::with_capacity(opts.batches);
    for batch in &occ.time {
        let mut h = vec![0.0; width];
        for (link, row) in batch.iter().enumerate() {
            for (k, t) in pad(row).iter().enumerate() {
                h[k] += t;
                pooled[k] += t;
                per_link[link][k] += t;
            }
        }
        normalise(&mut h);
        batch_laws.push(h);
    }
    normalise(&mut pooled);
    per_link.iter_mut().for_each(|h| normalise(h));

    let nb = opts.batches as f64;
    let t_q = StudentsT::new(0.0, 1.0, nb - 1.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.975);
    let half_width = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / nb;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nb - 1.0);
        t_q * (var / nb).sqrt()
    };
    let ci = (0..width)
        .map(|k| half_width(&batch_laws.iter().map(|h| h[k]).collect::<Vec<_>>()))
        .collect();
    let alpha_bar_ci = half_width(&batch_laws.iter().map(|h| mean(h)).collect::<Vec<_>>());

    let mut max_link_tv = 0.0f64;
    for a in 0..per_link.len() {
        for b in a + 1..per_link.len() {
            max_link_tv = max_link_tv.max(tv_distance(&per_link[a], &per_link[b]));
        }
    }
    Ok(SimSummary {
        topology: topo.into(),
        rho: params.rho,
        seed: opts.seed,
        horizon: opts.horizon,
        warmup,
        alpha_bar_emp: mean(&pooled),
        empirical_alpha: pooled,
        ci,
        alpha_bar_ci,
        n_events,
        max_link_tv,
        max_link_load: max_load,
    })
}

/// Independent replicas with distinct seeds, run concurrently.
pub fn simulate_replicas(params: &SystemParams, topo: &Topology, opts: &SimOptions, seeds: &[u64]) -> Vec<Result<SimSummary>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let o = SimOptions { seed, ..opts.clone() };
                s.spawn(move || simulate(params, topo, &o))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("replica panicked".into()))))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub per_link: Vec<Vec<f64>>,
    /// Average of the link laws, comparable with the pooled simulation histogram.
    pub pooled: Vec<f64>,
    pub boundary_mass: f64,
    pub states: usize,
    pub residual: f64,
}

/// States solved by dense LU; larger chains use Gauss-Seidel sweeps.
const DENSE_LIMIT: usize = 4096;

/// Stationary law of the chain on route counts `0..=cap`.
pub fn exact_oracle(params: &SystemParams, topo: &Topology, cap: u32) -> Result<OracleResult> {
    let nr = topo.routes.len();
    let base = cap as usize + 1;
    let states = (0..nr).try_fold(1usize, |acc, _| acc.checked_mul(base).filter(|s| *s <= 1_000_000));
    let Some(n) = states else {
        return Err(Error::InvalidInput(format!(
            "(cap + 1)^routes = {base}^{nr} exceeds 1e6 states"
        )));
    };
    let decode = |mut s: usize| {
        let mut c = vec![0u32; nr];
        for slot in c.iter_mut() {
            *slot = (s % base) as u32;
            s /= base;
        }
        c
    };
    let stride: Vec<usize> = (0..nr).map(|r| base.pow(r as u32)).collect();
    // Outgoing transitions of each state.
    let mut out: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for s in 0..n {
        let st = SimState::from_counts(topo, decode(s))?;
        let rates = transition_rates(&st, params, topo);
        let mut tr = Vec::new();
        for r in 0..nr {
            if st.counts[r] < cap && rates.arrivals[r] > 0.0 {
                tr.push((s + stride[r], rates.arrivals[r]));
            }
            if rates.departures[r] > 0.0 {
                tr.push((s - stride[r], rates.departures[r]));
            }
        }
        out.push(tr);
    }
    let pi = if n <= DENSE_LIMIT {
        dense_stationary(&out)?
    } else {
        gauss_seidel_stationary(&out)?
    };
    let residual = balance_residual(&out, &pi);

    let mut per_link = vec![Vec::<f64>::new(); topo.n_links];
    let mut boundary_mass = 0.0;
    for (s, p) in pi.iter().enumerate() {
        let st = SimState::from_counts(topo, decode(s))?;
        if st.counts.contains(&cap) {
            boundary_mass += p;
        }
        for (link, &x) in st.x.iter().enumerate() {
            let h = &mut per_link[link];
            if h.len() <= x as usize {
                h.resize(x as usize + 1, 0.0);
            }
            h[x as usize] += p;
        }
    }
    if boundary_mass > 1e-8 {
        return Err(Error::Truncation(format!(
            "mass {boundary_mass:.3e} on the truncation boundary; raise cap above {cap}"
        )));
    }
    let width = per_link.iter().map(|h| h.len()).max().unwrap_or(1);
    let mut pooled = vec![0.0; width];
    for h in &per_link {
        for (k, p) in h.iter().enumerate() {
            pooled[k] += p / topo.n_links as f64;
        }
    }
    Ok(OracleResult {
        per_link,
        pooled,
        boundary_mass,
        states: n,
        residual,
    })
}

fn dense_stationary(out: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = out.len();
    // Rows of Q^T, the last replaced by the normalisation.
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (s, tr) in out.iter().enumerate() {
        for &(t, q) in tr {
            m[(t, s)] += q;
            m[(s, s)] -= q;
        }
    }
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonConvergence("singular generator".into()))?;
    Ok(x.iter().map(|p| p.max(0.0)).collect())
}

fn gauss_seidel_stationary(out: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = out.len();
    let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut exit = vec![0.0; n];
    for (s, tr) in out.iter().enumerate() {
        for &(t, q) in tr {
            inflow[t].push((s, q));
            exit[s] += q;
        }
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        for s in 0..n {
            if exit[s] > 0.0 {
                pi[s] = inflow[s].iter().map(|&(u, q)| pi[u] * q).sum::<f64>() / exit[s];
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        if balance_residual(out, &pi) < 1e-13 {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence("Gauss-Seidel did not settle".into()))
}

/// `max_s |(pi Q)_s|`.
fn balance_residual(out: &[Vec<(usize, f64)>], pi: &[f64]) -> f64 {
    let mut flow = vec![0.0; pi.len()];
    for (s, tr) in out.iter().enumerate() {
        for &(t, q) in tr {
            flow[t] += pi[s] * q;
            flow[s] -= pi[s] * q;
        }
    }
    flow.iter().fold(0.0f64, |a, f| a.max(f.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bipartite_links_see_lambda() {
        let t = Topology::bipartite(10, 0.7).unwrap();
        assert_eq!(t.routes.len(), 25);
        for r in t.link_rates() {
            assert_relative_eq!(r, 0.7, max_relative = 1e-14);
        }
        assert!(Topology::bipartite(7, 0.5).is_err());
    }

    #[test]
    fn rates_by_hand() {
        let params = SystemParams::new(0.25, 2.0).unwrap();
        let t = Topology::tiny(0.25).unwrap();
        let empty = SimState::empty(&t);
        let r = transition_rates(&empty, &params, &t);
        assert_eq!(r.departures, vec![0.0, 0.0]);
        assert_relative_eq!(r.total, 2.0 * 0.125);

        let one = SimState::from_counts(&t, vec![1, 0]).unwrap();
        assert_relative_eq!(transition_rates(&one, &params, &t).departures[0], 0.5);

        // Both routes share link 0, so X_0 = 2 and each gets 1/2.
        let two = SimState::from_counts(&t, vec![1, 1]).unwrap();
        let d = transition_rates(&two, &params, &t).departures;
        assert_relative_eq!(d[0], 1.0 / (2.0 * 2.0));
        assert_relative_eq!(d[1], 1.0 / (2.0 * 2.0));
        assert!(link_loads(&two, &t).iter().all(|l| *l <= 1.0 + 1e-15));
    }

    #[test]
    fn sum_tree_sampling() {
        let mut t = SumTree::new(5);
        for (i, w) in [1.0, 0.0, 2.0, 0.0, 3.0].iter().enumerate() {
            t.set(i, *w);
        }
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 2);
        assert_eq!(t.find(5.999), 4);
        t.set(4, 0.0);
        assert_eq!(t.find(2.9999), 2);
    }

    #[test]
    fn no_arrivals_stays_empty() {
        let params = SystemParams::new(0.0, 1.0).unwrap();
        let t = Topology::bipartite(4, 0.0).unwrap();
        let s = simulate(&params, &t, &SimOptions { horizon: 100.0, ..SimOptions::default() }).unwrap();
        assert_eq!(s.empirical_alpha, vec![1.0]);
        assert_eq!(s.n_events, 0);
    }

    #[test]
    fn single_route_oracle_is_geometric() {
        let params = SystemParams::new(0.4, 1.5).unwrap();
        let t = Topology::custom(2, vec![(0, 1)], 0.4).unwrap();
        let o = exact_oracle(&params, &t, 60).unwrap();
        let q: f64 = 0.4 * 1.5;
        for k in 0..10 {
            assert_relative_eq!(o.per_link[0][k], (1.0 - q) * q.powi(k as i32), max_relative = 1e-9);
        }
    }

    #[test]
    fn disjoint_routes_are_independent() {
        let params = SystemParams::new(0.3, 1.0).unwrap();
        let t = Topology::custom(4, vec![(0, 1), (2, 3)], 0.3).unwrap();
        let o = exact_oracle(&params, &t, 40).unwrap();
        for link in 0..4 {
            for k in 0..8 {
                assert_relative_eq!(o.per_link[link][k], 0.7 * 0.3f64.powi(k as i32), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn oracle_rejects_small_cap_and_huge_space() {
        let params = SystemParams::new(0.9, 1.0).unwrap();
        let t = Topology::custom(2, vec![(0, 1)], 0.9).unwrap();
        assert!(matches!(exact_oracle(&params, &t, 5), Err(Error::Truncation(_))));
        let big = Topology::bipartite(8, 0.5).unwrap();
        assert!(exact_oracle(&params, &big, 10).is_err());
    }

    #[test]
    fn gauss_seidel_agrees_with_lu() {
        let params = SystemParams::new(0.3, 1.0).unwrap();
        let t = Topology::tiny(0.3).unwrap();
        let st = |s: usize| SimState::from_counts(&t, vec![(s % 21) as u32, (s / 21) as u32]).unwrap();
        let mut out = Vec::new();
        for s in 0..441 {
            let x = st(s);
            let r = transition_rates(&x, &params, &t);
            let mut tr = Vec::new();
            for k in 0..2 {
                let stride = if k == 0 { 1 } else { 21 };
                if x.counts[k] < 20 {
                    tr.push((s + stride, r.arrivals[k]));
                }
                if r.departures[k] > 0.0 {
                    tr.push((s - stride, r.departures[k]));
                }
            }
            out.push(tr);
        }
        let a = dense_stationary(&out).unwrap();
        let b = gauss_seidel_stationary(&out).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn tv_of_padded_laws() {
        assert_eq!(tv_distance(&[1.0], &[0.5, 0.5]), 0.5);
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
    }
}
