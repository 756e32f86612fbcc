use proptest::prelude::*;
use starnet_core::netsim::*;
use starnet_core::SystemParams;

fn run(topo: &Topology, rho: f64, horizon: f64, seed: u64) -> SimSummary {
    let p = SystemParams::from_load(rho).unwrap();
    simulate(&p, topo, &SimOptions { horizon, seed, ..SimOptions::default() }).unwrap()
}

#[test]
fn tiny_instance_matches_exact_chain() {
    let p = SystemParams::from_load(0.3).unwrap();
    let t = Topology::tiny(0.3).unwrap();
    let o = exact_oracle(&p, &t, 40).unwrap();
    assert_eq!(o.states, 41 * 41);
    assert!(o.boundary_mass < 1e-8 && o.residual < 1e-12);
    let s = run(&t, 0.3, 5e5, 11);
    assert!(tv_distance(&s.empirical_alpha, &o.pooled) < 0.01);
}

#[test]
fn shared_link_couples_the_routes() {
    // Link 0 carries both routes, so its law differs from an unshared link's.
    let p = SystemParams::from_load(0.6).unwrap();
    let o = exact_oracle(&p, &Topology::tiny(0.6).unwrap(), 60).unwrap();
    assert!(tv_distance(&o.per_link[0], &o.per_link[1]) > 0.05);
    assert!(tv_distance(&o.per_link[1], &o.per_link[2]) < 1e-12);
}

#[test]
fn links_become_exchangeable_with_horizon() {
    let t = Topology::bipartite(4, 0.5).unwrap();
    let short = run(&t, 0.5, 2e2, 3).max_link_tv;
    let long = run(&t, 0.5, 2e5, 3).max_link_tv;
    assert!(long < short && long < 0.02, "{short} {long}");
}

#[test]
fn replicas_equal_single_runs() {
    let p = SystemParams::from_load(0.4).unwrap();
    let t = Topology::bipartite(6, 0.4).unwrap();
    let opts = SimOptions { horizon: 500.0, ..SimOptions::default() };
    let many = simulate_replicas(&p, &t, &opts, &[5, 6, 7]);
    for (r, seed) in many.into_iter().zip([5, 6, 7]) {
        assert_eq!(r.unwrap(), run(&t, 0.4, 500.0, seed));
    }
}

#[test]
fn rejects_bad_horizon() {
    let p = SystemParams::from_load(0.4).unwrap();
    let t = Topology::bipartite(4, 0.4).unwrap();
    let opts = SimOptions { horizon: 10.0, warmup: Some(20.0), ..SimOptions::default() };
    assert!(simulate(&p, &t, &opts).is_err());
}

fn law() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..12).prop_filter_map("positive mass", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tv_is_a_metric(p in law(), q in law(), r in law()) {
        let d = tv_distance(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - tv_distance(&q, &p)).abs() < 1e-15);
        prop_assert!(tv_distance(&p, &p) == 0.0);
        prop_assert!(d <= tv_distance(&p, &r) + tv_distance(&r, &q) + 1e-12);
    }

    #[test]
    fn min_sharing_respects_capacity(counts in prop::collection::vec(0u32..6, 9)) {
        let t = Topology::bipartite(6, 0.5).unwrap();
        let s = SimState::from_counts(&t, counts).unwrap();
        prop_assert!(s.is_consistent(&t));
        prop_assert!(link_loads(&s, &t).iter().all(|l| *l <= 1.0 + 1e-12));
        let rates = transition_rates(&s, &SystemParams::new(0.5, 1.0).unwrap(), &t);
        for (r, &(i, j)) in t.routes.iter().enumerate() {
            let c = s.counts[r] as f64;
            let want = if c > 0.0 { c * (1.0 / s.x[i] as f64).min(1.0 / s.x[j] as f64) } else { 0.0 };
            prop_assert!((rates.departures[r] - want).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fixed_seed_is_reproducible(seed in any::<u64>(), rho in 0.1f64..0.8) {
        let t = Topology::bipartite(8, rho).unwrap();
        let a = run(&t, rho, 300.0, seed);
        let b = run(&t, rho, 300.0, seed);
        prop_assert_eq!(&a, &b);
        prop_assert!((a.empirical_alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.ci.iter().all(|c| *c >= 0.0));
        prop_assert!(a.max_link_load <= 1.0 + 1e-12);
    }
}
