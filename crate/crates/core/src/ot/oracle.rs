//! Exact small-instance 2-Wasserstein solver used to cross-check the fast
//! distances. Correctness over speed: instances are capped at `n * n' <= 64`.

use super::{squared_cost_matrix, DiscreteDistribution};
use crate::error::Error;
use crate::scalar::Real;
use crate::Result;

/// Largest `n * n'` the oracle accepts.
pub const ORACLE_SIZE_CAP: usize = 64;

/// Exact 2-Wasserstein distance.
///
/// Uniform equal-size inputs are solved by enumerating assignments; anything
/// else goes through successive-shortest-paths min-cost flow on the complete
/// bipartite graph.
pub fn exact_w2_oracle<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
) -> Result<F> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            left: source.dim(),
            right: target.dim(),
        });
    }
    let (n, m) = (source.len(), target.len());
    if n * m > ORACLE_SIZE_CAP {
        return Err(Error::OracleTooLarge {
            cap: ORACLE_SIZE_CAP,
            got: n * m,
        });
    }
    let cost = squared_cost_matrix(source.support(), target.support());
    let uniform = |d: &DiscreteDistribution<F>| {
        let w = F::one() / F::of(d.len() as f64);
        d.weights().iter().all(|&x| x == w)
    };
    let total = if n == m && n <= 8 && uniform(source) && uniform(target) {
        min_assignment_cost(&cost) / F::of(n as f64)
    } else {
        min_cost_flow(
            &cost,
            source.weights().as_slice().unwrap(),
            target.weights().as_slice().unwrap(),
        )
    };
    Ok(total.max(F::zero()).sqrt())
}

/// Brute-force minimum over all n! assignments.
fn min_assignment_cost<F: Real>(cost: &ndarray::Array2<F>) -> F {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = F::infinity();
    permute(&mut perm, 0, &mut |p| {
        let c: F = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        if c < best {
            best = c;
        }
    });
    best
}

fn permute<T, Fv: FnMut(&[T])>(items: &mut [T], k: usize, visit: &mut Fv) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Successive shortest paths with Dijkstra over reduced costs.
///
/// Node layout: 0..n sources, n..n+m sinks, then a super source and a super
/// sink. Potentials keep every residual edge's reduced cost nonnegative, so
/// Dijkstra's predecessor pointers always form a tree and each augmentation
/// follows a true shortest path.
fn min_cost_flow<F: Real>(cost: &ndarray::Array2<F>, supply: &[F], demand: &[F]) -> F {
    let n = supply.len();
    let m = demand.len();
    let src = n + m;
    let dst = n + m + 1;
    let nodes = n + m + 2;
    let inf = F::infinity();

    let mut flow = ndarray::Array2::<F>::zeros((n, m));
    let mut used_supply = vec![F::zero(); n];
    let mut used_demand = vec![F::zero(); m];
    let mut potential = vec![F::zero(); nodes];
    // leftover mass below this is dropped; its cost contribution is negligible
    let slack = F::of(1e-12);
    let max_augmentations = 100 * nodes * nodes;

    for _ in 0..max_augmentations {
        let remaining: F = supply
            .iter()
            .zip(&used_supply)
            .map(|(&s, &u)| s - u)
            .sum();
        if remaining <= slack {
            break;
        }

        let mut dist = vec![inf; nodes];
        let mut prev: Vec<Option<usize>> = vec![None; nodes];
        let mut done = vec![false; nodes];
        dist[src] = F::zero();
        loop {
            let mut u = usize::MAX;
            let mut best = inf;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == dst {
                break;
            }
            done[u] = true;
            let relax = |v: usize, raw_cost: F, dist: &mut Vec<F>, prev: &mut Vec<Option<usize>>| {
                let reduced = (raw_cost + potential[u] - potential[v]).max(F::zero());
                if dist[u] + reduced < dist[v] {
                    dist[v] = dist[u] + reduced;
                    prev[v] = Some(u);
                }
            };
            if u == src {
                for i in 0..n {
                    if supply[i] - used_supply[i] > F::zero() {
                        relax(i, F::zero(), &mut dist, &mut prev);
                    }
                }
            } else if u < n {
                for j in 0..m {
                    relax(n + j, cost[(u, j)], &mut dist, &mut prev);
                }
            } else if u < n + m {
                let j = u - n;
                if demand[j] - used_demand[j] > F::zero() {
                    relax(dst, F::zero(), &mut dist, &mut prev);
                }
                for i in 0..n {
                    if flow[(i, j)] > F::zero() {
                        relax(i, -cost[(i, j)], &mut dist, &mut prev);
                    }
                }
            }
        }
        if dist[dst] == inf {
            break;
        }
        for v in 0..nodes {
            potential[v] += dist[v].min(dist[dst]);
        }

        // bottleneck along the predecessor path
        let mut bottleneck = inf;
        let mut node = dst;
        while let Some(from) = prev[node] {
            if from == src {
                bottleneck = bottleneck.min(supply[node] - used_supply[node]);
            } else if node == dst {
                bottleneck = bottleneck.min(demand[from - n] - used_demand[from - n]);
            } else if from < n && node >= n {
                // forward edge, unbounded
            } else {
                bottleneck = bottleneck.min(flow[(node, from - n)]);
            }
            node = from;
        }
        let mut node = dst;
        while let Some(from) = prev[node] {
            if from == src {
                used_supply[node] += bottleneck;
            } else if node == dst {
                used_demand[from - n] += bottleneck;
            } else if from < n && node >= n {
                flow[(from, node - n)] += bottleneck;
            } else {
                flow[(node, from - n)] -= bottleneck;
            }
            node = from;
        }
    }

    let mut total = F::zero();
    for ((i, j), &f) in flow.indexed_iter() {
        if f > F::zero() {
            total += f * cost[(i, j)];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr1, array};

    #[test]
    fn dirac_pair_is_euclidean_distance() {
        let mu = DiscreteDistribution::uniform(array![[0.0, 0.0]]).unwrap();
        let nu = DiscreteDistribution::uniform(array![[3.0, 4.0]]).unwrap();
        assert_relative_eq!(exact_w2_oracle(&mu, &nu).unwrap(), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn cross_instance_enumerates_permutations() {
        let mu = DiscreteDistribution::uniform(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let nu = DiscreteDistribution::uniform(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_relative_eq!(exact_w2_oracle(&mu, &nu).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn three_point_clouds_match_brute_force_permutations() {
        let mu = DiscreteDistribution::uniform(array![[0.0, 0.5], [1.0, -1.0], [2.0, 0.3]]).unwrap();
        let nu = DiscreteDistribution::uniform(array![[0.2, 0.0], [1.5, 1.0], [-1.0, 2.0]]).unwrap();
        let cost = squared_cost_matrix(mu.support(), nu.support());
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| cost[(i, p[i])]).sum::<f64>() / 3.0)
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        assert_relative_eq!(exact_w2_oracle(&mu, &nu).unwrap(), best, max_relative = 1e-12);
    }

    #[test]
    fn flow_route_agrees_with_assignment_route_on_uniform_instances() {
        // Same instance solved both ways: nudge weights so the flow path runs.
        let support_a = array![[0.0, 0.5], [1.0, -1.0], [2.0, 0.3]];
        let support_b = array![[0.2, 0.0], [1.5, 1.0], [-1.0, 2.0]];
        let mu = DiscreteDistribution::uniform(support_a.clone()).unwrap();
        let nu = DiscreteDistribution::uniform(support_b.clone()).unwrap();
        let by_assignment = exact_w2_oracle(&mu, &nu).unwrap();
        let w = 1.0 / 3.0;
        let mu2 = DiscreteDistribution::new(support_a, arr1(&[w, w, w]) * 1.0).unwrap();
        let nu2 = DiscreteDistribution::new(support_b, arr1(&[w + 1e-10, w, w - 1e-10])).unwrap();
        let by_flow = exact_w2_oracle(&mu2, &nu2).unwrap();
        assert_relative_eq!(by_assignment, by_flow, max_relative = 1e-6);
    }

    #[test]
    fn size_cap_enforced() {
        let mu = DiscreteDistribution::uniform(ndarray::Array2::<f64>::zeros((9, 1))).unwrap();
        let nu = DiscreteDistribution::uniform(ndarray::Array2::<f64>::ones((9, 1))).unwrap();
        assert!(matches!(
            exact_w2_oracle(&mu, &nu),
            Err(Error::OracleTooLarge { .. })
        ));
    }
}
