//! Randomized invariants over the transport layer, driven by proptest.
//!
//! These overlap with the seeded `sgot proptest` suite on purpose: the CLI
//! suite is the reproducible acceptance artifact, this file gets shrinking
//! and fresh instances on every run.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sgot_core::ot::{
    exact_w2_oracle, pw2, rpw2, rpw2_axis_plans, sw2, wasserstein_1d, DiscreteDistribution,
    Rpw2Impl, SlicedConfig,
};

fn coords(n: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * dim)
}

fn raw_weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, n)
}

fn build(coords: Vec<f64>, dim: usize, raw: Vec<f64>) -> DiscreteDistribution<f64> {
    let n = raw.len();
    let total: f64 = raw.iter().sum();
    let weights = Array1::from_iter(raw.into_iter().map(|w| w / total));
    let support = Array2::from_shape_vec((n, dim), coords).unwrap();
    DiscreteDistribution::new(support, weights).unwrap()
}

/// A pair of weighted distributions in the same ambient dimension.
fn pair(
    max_n: usize,
    max_dim: usize,
) -> impl Strategy<Value = (DiscreteDistribution<f64>, DiscreteDistribution<f64>)> {
    (1..=max_n, 1..=max_n, 1..=max_dim).prop_flat_map(|(n, m, dim)| {
        (
            coords(n, dim),
            raw_weights(n),
            coords(m, dim),
            raw_weights(m),
        )
            .prop_map(move |(ca, wa, cb, wb)| (build(ca, dim, wa), build(cb, dim, wb)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequential_and_quadratic_agree((mu, nu) in pair(30, 6)) {
        let seq = rpw2(&mu, &nu, Rpw2Impl::Sequential).unwrap();
        let quad = rpw2(&mu, &nu, Rpw2Impl::Quadratic).unwrap();
        let scale = seq.abs().max(1.0);
        prop_assert!((seq - quad).abs() <= 1e-9 * scale, "seq {seq} vs quad {quad}");
    }

    #[test]
    fn rpw2_is_a_symmetric_nonnegative_pseudometric((mu, nu) in pair(20, 4)) {
        let fwd = rpw2(&mu, &nu, Rpw2Impl::Sequential).unwrap();
        let bwd = rpw2(&nu, &mu, Rpw2Impl::Sequential).unwrap();
        prop_assert_eq!(fwd.to_bits(), bwd.to_bits(), "symmetry must be exact");
        prop_assert!(fwd >= 0.0);
        let self_d = rpw2(&mu, &mu, Rpw2Impl::Sequential).unwrap();
        prop_assert!(self_d <= 1e-9, "self distance {self_d}");
    }

    #[test]
    fn merge_cost_matches_exact_oracle_in_1d((mu, nu) in pair(8, 1)) {
        let (_, cost) = wasserstein_1d(&mu, &nu).unwrap();
        let merge = cost.max(0.0).sqrt();
        let exact = exact_w2_oracle(&mu, &nu).unwrap();
        let scale = exact.abs().max(1.0);
        prop_assert!((merge - exact).abs() <= 1e-12 * scale, "merge {merge} vs exact {exact}");
    }

    #[test]
    fn exact_w2_lower_bounds_rpw2((mu, nu) in pair(8, 3)) {
        // every per-axis monotone plan is a feasible coupling for the full
        // cost, so the axis average cannot undercut the optimum
        let fast = rpw2(&mu, &nu, Rpw2Impl::Sequential).unwrap();
        let exact = exact_w2_oracle(&mu, &nu).unwrap();
        prop_assert!(fast >= exact - 1e-9, "rpw2 {fast} below exact {exact}");
    }

    #[test]
    fn axis_plans_have_exact_marginals_and_sparse_support((mu, nu) in pair(20, 4)) {
        for plan in rpw2_axis_plans(&mu, &nu).unwrap() {
            prop_assert!(plan.entries.len() <= mu.len() + nu.len() - 1);
            prop_assert!(plan.entries.iter().all(|&(_, _, m)| m > 0.0));
            let (row, col) = plan.marginals();
            for (got, want) in row.iter().zip(mu.weights()) {
                prop_assert!((got - want).abs() <= 1e-12);
            }
            for (got, want) in col.iter().zip(nu.weights()) {
                prop_assert!((got - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sliced_distances_collapse_to_1d_transport((mu, nu) in pair(12, 1), seed in any::<u64>()) {
        let (_, cost) = wasserstein_1d(&mu, &nu).unwrap();
        let w = cost.max(0.0).sqrt();
        let cfg = SlicedConfig { num_projections: 7, rng_seed: seed };
        let s = sw2(&mu, &nu, &cfg).unwrap();
        let p = pw2(&mu, &nu, &cfg).unwrap();
        let scale = w.abs().max(1.0);
        prop_assert!((s - w).abs() <= 1e-9 * scale, "sw2 {s} vs w1d {w}");
        prop_assert!((p - w).abs() <= 1e-9 * scale, "pw2 {p} vs w1d {w}");
    }
}
