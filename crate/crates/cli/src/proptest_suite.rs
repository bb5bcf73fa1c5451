//! Seeded randomized invariant suite behind `sgot proptest`.
//!
//! Each property draws fresh random instances and checks an invariant the
//! library promises. One line is printed per property; the command fails if
//! any property does.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgot_core::graph::{one_hot_encode, stratified_split_indices};
use sgot_core::ot::{
    exact_w2_oracle, pw2, rpw2, sw2, wasserstein_1d, DiscreteDistribution, Rpw2Impl, SlicedConfig,
};
use sgot_core::sgcn::{embed, embed_gradient};
use sgot_core::{Error, Result};

fn random_distribution(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    p: usize,
) -> DiscreteDistribution<f64> {
    let n = rng.gen_range(1..=max_n);
    let support = Array2::from_shape_fn((n, p), |_| rng.gen_range(-3.0..3.0));
    let weights = Array1::from_shape_fn(n, |_| rng.gen_range(0.1..1.0));
    let total: f64 = weights.sum();
    DiscreteDistribution::new(support, weights / total).expect("valid by construction")
}

type Property = fn(&mut ChaCha8Rng, usize) -> std::result::Result<(), String>;

fn plan_marginals(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let mu = random_distribution(rng, 60, 1);
        let nu = random_distribution(rng, 60, 1);
        let (plan, _) = wasserstein_1d(&mu, &nu).map_err(|e| e.to_string())?;
        if plan.entries.len() > mu.len() + nu.len() - 1 {
            return Err(format!("case {case}: plan has too many entries"));
        }
        if plan.entries.iter().any(|&(_, _, m)| m <= 0.0) {
            return Err(format!("case {case}: non-positive plan mass"));
        }
        let (row, col) = plan.marginals();
        for (got, want) in row.iter().zip(mu.weights()) {
            if (got - want).abs() > 1e-12 {
                return Err(format!("case {case}: source marginal off by {}", got - want));
            }
        }
        for (got, want) in col.iter().zip(nu.weights()) {
            if (got - want).abs() > 1e-12 {
                return Err(format!("case {case}: target marginal off by {}", got - want));
            }
        }
    }
    Ok(())
}

fn rpw2_pseudometric(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let p = rng.gen_range(1..=6);
        let mu = random_distribution(rng, 40, p);
        let nu = random_distribution(rng, 40, p);
        let d_ab = rpw2(&mu, &nu, Rpw2Impl::Sequential).map_err(|e| e.to_string())?;
        let d_ba = rpw2(&nu, &mu, Rpw2Impl::Sequential).map_err(|e| e.to_string())?;
        if d_ab != d_ba {
            return Err(format!("case {case}: symmetry broken: {d_ab} vs {d_ba}"));
        }
        if d_ab < 0.0 {
            return Err(format!("case {case}: negative distance {d_ab}"));
        }
        let self_d = rpw2(&mu, &mu, Rpw2Impl::Sequential).map_err(|e| e.to_string())?;
        if self_d.abs() > 1e-9 {
            return Err(format!("case {case}: self-distance {self_d}"));
        }
    }
    Ok(())
}

fn seq_quad_equivalence(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let p = rng.gen_range(1..=6);
        let mu = random_distribution(rng, 50, p);
        let nu = random_distribution(rng, 50, p);
        let seq = rpw2(&mu, &nu, Rpw2Impl::Sequential).map_err(|e| e.to_string())?;
        let quad = rpw2(&mu, &nu, Rpw2Impl::Quadratic).map_err(|e| e.to_string())?;
        let scale = seq.abs().max(quad.abs()).max(1.0);
        if (seq - quad).abs() / scale > 1e-9 {
            return Err(format!("case {case}: seq {seq} vs quad {quad}"));
        }
    }
    Ok(())
}

fn rpw2_lower_bounds_w2(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let p = rng.gen_range(1..=4);
        let mu = random_distribution(rng, 8, p);
        let nu = random_distribution(rng, 8, p);
        let fast = rpw2(&mu, &nu, Rpw2Impl::Sequential).map_err(|e| e.to_string())?;
        let exact = exact_w2_oracle(&mu, &nu).map_err(|e| e.to_string())?;
        if fast < exact - 1e-9 {
            return Err(format!("case {case}: rpw2 {fast} below exact W2 {exact}"));
        }
    }
    Ok(())
}

fn w1d_matches_oracle(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let mu = random_distribution(rng, 8, 1);
        let nu = random_distribution(rng, 8, 1);
        let (_, cost) = wasserstein_1d(&mu, &nu).map_err(|e| e.to_string())?;
        let exact = exact_w2_oracle(&mu, &nu).map_err(|e| e.to_string())?;
        if (cost.sqrt() - exact).abs() > 1e-9 * exact.max(1.0) {
            return Err(format!(
                "case {case}: merge cost {} vs exact {exact}",
                cost.sqrt()
            ));
        }
    }
    Ok(())
}

fn sliced_collapse_in_1d(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    let cfg = SlicedConfig::default();
    for case in 0..cases {
        let mu = random_distribution(rng, 30, 1);
        let nu = random_distribution(rng, 30, 1);
        let (_, cost) = wasserstein_1d(&mu, &nu).map_err(|e| e.to_string())?;
        let w = cost.sqrt();
        let s = sw2(&mu, &nu, &cfg).map_err(|e| e.to_string())?;
        let pp = pw2(&mu, &nu, &cfg).map_err(|e| e.to_string())?;
        if (s - w).abs() > 1e-9 * w.max(1.0) || (pp - w).abs() > 1e-9 * w.max(1.0) {
            return Err(format!("case {case}: 1-D sw2 {s} / pw2 {pp} vs w1d {w}"));
        }
    }
    Ok(())
}

fn embed_gradient_fd(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    let cases = cases.min(40);
    let mut checked = 0usize;
    for case in 0..cases {
        let n = rng.gen_range(1..6);
        let q = rng.gen_range(1..5);
        let p = rng.gen_range(1..=q);
        let h = Array2::from_shape_fn((n, q), |_| rng.gen_range(-1.0..1.0));
        let theta = Array2::from_shape_fn((q, p), |_| rng.gen_range(-1.0..1.0));
        let upstream = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0));
        let base = embed(&h, &theta).map_err(|e| e.to_string())?;
        let grad = embed_gradient(&h, &base.relu_mask, &upstream).map_err(|e| e.to_string())?;
        let objective = |th: &Array2<f64>| -> f64 {
            let e = embed(&h, th).expect("shapes fixed");
            (&e.support * &upstream).sum()
        };
        let step = 1e-6;
        for a in 0..q {
            for b in 0..p {
                let mut tp = theta.clone();
                tp[(a, b)] += step;
                let mut tm = theta.clone();
                tm[(a, b)] -= step;
                // skip points where a ReLU unit flips inside the stencil
                let mask_p = embed(&h, &tp).unwrap().relu_mask;
                let mask_m = embed(&h, &tm).unwrap().relu_mask;
                if mask_p != base.relu_mask || mask_m != base.relu_mask {
                    continue;
                }
                let fd = (objective(&tp) - objective(&tm)) / (2.0 * step);
                let scale = grad[(a, b)].abs().max(fd.abs()).max(1e-3);
                if (grad[(a, b)] - fd).abs() / scale > 1e-4 {
                    return Err(format!(
                        "case {case}: grad[{a},{b}] {} vs fd {fd}",
                        grad[(a, b)]
                    ));
                }
                checked += 1;
            }
        }
    }
    if checked < cases {
        return Err(format!("only {checked} stable finite-difference checks ran"));
    }
    Ok(())
}

fn one_hot_rows(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let domain = rng.gen_range(1..20);
        let n = rng.gen_range(1..50);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..domain)).collect();
        let enc: Array2<f64> = one_hot_encode(&labels, domain).map_err(|e| e.to_string())?;
        for (i, row) in enc.rows().into_iter().enumerate() {
            if row.sum() != 1.0 || row[labels[i]] != 1.0 {
                return Err(format!("case {case}: row {i} is not one-hot"));
            }
        }
    }
    Ok(())
}

fn split_partitions(rng: &mut ChaCha8Rng, cases: usize) -> std::result::Result<(), String> {
    for case in 0..cases {
        let n = rng.gen_range(10..200);
        let classes = rng.gen_range(2..5);
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(rng);
        let (train, test) =
            stratified_split_indices(&labels, 0.9, rng.gen()).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() {
            return Err(format!("case {case}: split is not a partition"));
        }
        let want = (0.9 * n as f64).round() as usize;
        if train.len() != want {
            return Err(format!(
                "case {case}: train size {} != round(0.9 * {n}) = {want}",
                train.len()
            ));
        }
    }
    Ok(())
}

pub fn run(seed: u64, cases: usize) -> Result<()> {
    let properties: [(&str, Property); 9] = [
        ("plan-marginals-and-sparsity", plan_marginals),
        ("rpw2-pseudometric", rpw2_pseudometric),
        ("rpw2-seq-quad-equivalence", seq_quad_equivalence),
        ("rpw2-lower-bounds-exact-w2", rpw2_lower_bounds_w2),
        ("w1d-matches-exact-oracle", w1d_matches_oracle),
        ("sliced-collapse-in-1d", sliced_collapse_in_1d),
        ("embed-gradient-finite-differences", embed_gradient_fd),
        ("one-hot-rows", one_hot_rows),
        ("stratified-split-partition", split_partitions),
    ];
    let mut failures = 0usize;
    for (i, (name, prop)) in properties.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        match prop(&mut rng, cases) {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(Error::Protocol(format!("{failures} properties failed")));
    }
    Ok(())
}
