//! Graph-to-distribution embedding: `Y = ReLU((A + I)^r X Theta)`.
//!
//! The propagation `H = (A + I)^r X` does not depend on Theta, so callers
//! compute it once per (graph, depth) and reuse it across every training step.

use crate::error::Error;
use crate::graph::Graph;
use crate::ot::DiscreteDistribution;
use crate::scalar::Real;
use crate::Result;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::path::Path;

/// The trainable matrix Theta plus the structural hyperparameters.
#[derive(Debug, Clone)]
pub struct SgcnParams<F: Real> {
    pub theta: Array2<F>,
    /// Neighborhood exploration depth r.
    pub depth: usize,
    /// Symmetric degree normalization of A + I. Off by default; the
    /// unnormalized propagation is the reference behavior.
    pub normalize_adjacency: bool,
    /// Seed used for the initial Theta draw (kept for manifests/checkpoints).
    pub init_seed: u64,
}

impl<F: Real> SgcnParams<F> {
    /// Seeded uniform init on [-sqrt(6/(q+p)), +sqrt(6/(q+p))], keeping
    /// pre-ReLU activations O(1).
    pub fn init(q: usize, p: usize, depth: usize, normalize_adjacency: bool, seed: u64) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::Config("q and p must be positive".into()));
        }
        if p > q {
            return Err(Error::Config(format!("output dim p={p} must satisfy p <= q={q}")));
        }
        let bound = (6.0 / (q + p) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = Array2::from_shape_fn((q, p), |_| F::of(rng.gen_range(-bound..bound)));
        Ok(Self {
            theta,
            depth,
            normalize_adjacency,
            init_seed: seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.theta.ncols()
    }

    /// Text checkpoint: one header line, then q rows of p values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "sgcn-theta v1 q={} p={} r={} normalize={} seed={}\n",
            self.input_dim(),
            self.output_dim(),
            self.depth,
            u8::from(self.normalize_adjacency),
            self.init_seed
        ));
        for row in self.theta.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(out.as_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut fields = std::collections::HashMap::new();
        for tok in header.split_whitespace().skip(2) {
            if let Some((k, v)) = tok.split_once('=') {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        if !header.starts_with("sgcn-theta v1") {
            return Err(Error::Checkpoint(format!("unrecognized header '{header}'")));
        }
        let get = |k: &str| -> Result<u64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or malformed field '{k}'")))
        };
        let (q, p) = (get("q")? as usize, get("p")? as usize);
        let depth = get("r")? as usize;
        let normalize = get("normalize")? != 0;
        let seed = get("seed")?;
        let mut theta = Array2::zeros((q, p));
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Checkpoint(e.to_string()))?;
            if i >= q {
                return Err(Error::Checkpoint("too many rows".into()));
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Checkpoint(format!("row {i}: {e}")))?;
            if vals.len() != p {
                return Err(Error::Checkpoint(format!("row {i} has {} values, expected {p}", vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                theta[(i, j)] = F::of(v);
            }
        }
        Ok(Self {
            theta,
            depth,
            normalize_adjacency: normalize,
            init_seed: seed,
        })
    }
}

/// `(A + I)^r X` by r successive sparse multiplications. With `normalize`,
/// the symmetrically normalized `D^{-1/2} (A + I) D^{-1/2}` is applied
/// instead.
pub fn propagate<F: Real>(graph: &Graph<F>, depth: usize, normalize: bool) -> Array2<F> {
    let n = graph.node_count();
    let mut h = graph.attributes().clone();
    if depth == 0 {
        return h;
    }
    let inv_sqrt_deg: Vec<F> = if normalize {
        (0..n)
            .map(|i| F::one() / F::of((graph.degree(i) + 1) as f64).sqrt())
            .collect()
    } else {
        Vec::new()
    };
    for _ in 0..depth {
        let mut next = Array2::zeros(h.raw_dim());
        for i in 0..n {
            let self_coef = if normalize {
                inv_sqrt_deg[i] * inv_sqrt_deg[i]
            } else {
                F::one()
            };
            {
                let row = h.row(i);
                let mut out = next.row_mut(i);
                out.zip_mut_with(&row, |o, &v| *o += self_coef * v);
            }
            for &j in graph.neighbors(i) {
                let coef = if normalize {
                    inv_sqrt_deg[i] * inv_sqrt_deg[j]
                } else {
                    F::one()
                };
                let row = h.row(j);
                let mut out = next.row_mut(i);
                out.zip_mut_with(&row, |o, &v| *o += coef * v);
            }
        }
        h = next;
    }
    h
}

/// Forward pass output: ReLU features and the active-unit mask recorded for
/// the matching backward pass.
#[derive(Debug, Clone)]
pub struct Embedding<F: Real> {
    pub support: Array2<F>,
    pub relu_mask: Array2<F>,
}

impl<F: Real> Embedding<F> {
    /// Uniform distribution on the embedded node features.
    pub fn distribution(&self) -> Result<DiscreteDistribution<F>> {
        DiscreteDistribution::uniform(self.support.clone())
    }
}

/// `Y = ReLU(H Theta)` with the subgradient-at-zero convention mask(0) = 0.
pub fn embed<F: Real>(h: &Array2<F>, theta: &Array2<F>) -> Result<Embedding<F>> {
    if h.ncols() != theta.nrows() {
        return Err(Error::DimensionMismatch {
            left: h.ncols(),
            right: theta.nrows(),
        });
    }
    let pre = h.dot(theta);
    let relu_mask = pre.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
    let support = pre.mapv(|v| v.max(F::zero()));
    if support.iter().all(|&v| v == F::zero()) {
        log::warn!("embedding is all-zero for every node (dead ReLU or Theta = 0)");
    }
    Ok(Embedding { support, relu_mask })
}

/// Convenience: propagate + embed for one graph.
pub fn embed_graph<F: Real>(graph: &Graph<F>, params: &SgcnParams<F>) -> Result<Embedding<F>> {
    let h = propagate(graph, params.depth, params.normalize_adjacency);
    embed(&h, &params.theta)
}

/// Chain rule through the forward pass: `dLoss/dTheta = H^T (upstream ⊙ mask)`.
///
/// The mask must come from the forward pass at the current Theta; shape
/// mismatches (the observable symptom of a stale pairing) are rejected.
pub fn embed_gradient<F: Real>(
    h: &Array2<F>,
    relu_mask: &Array2<F>,
    upstream: &Array2<F>,
) -> Result<Array2<F>> {
    if upstream.raw_dim() != relu_mask.raw_dim() || h.nrows() != upstream.nrows() {
        return Err(Error::Training(format!(
            "gradient shape mismatch: h {:?}, mask {:?}, upstream {:?}",
            h.shape(),
            relu_mask.shape(),
            upstream.shape()
        )));
    }
    let gated = upstream * relu_mask;
    Ok(h.t().dot(&gated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn path2() -> Graph<f64> {
        Graph::new(
            vec![vec![1], vec![0]],
            array![[1.0, 2.0], [3.0, 5.0]],
            0,
        )
        .unwrap()
    }

    #[test]
    fn depth_zero_is_identity() {
        let g = path2();
        assert_eq!(propagate(&g, 0, false), *g.attributes());
    }

    #[test]
    fn two_node_path_depth_one_sums_rows() {
        let g = path2();
        let h = propagate(&g, 1, false);
        assert_eq!(h, array![[4.0, 7.0], [4.0, 7.0]]);
    }

    #[test]
    fn cycle_depth_two_matches_dense_power() {
        // 4-node cycle, oracle: dense (A + I)^2 X
        let g = Graph::new(
            vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![0, 2]],
            array![[1.0], [2.0], [-1.0], [0.5]],
            0,
        )
        .unwrap();
        let mut a = Array2::<f64>::eye(4);
        for i in 0..4 {
            for &j in g.neighbors(i) {
                a[(i, j)] = 1.0;
            }
        }
        let dense = a.dot(&a).dot(g.attributes());
        let h = propagate(&g, 2, false);
        for (got, want) in h.iter().zip(dense.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn normalized_propagation_row_stochastic_on_regular_graph() {
        // On a d-regular graph the normalized operator has rows summing to 1.
        let g = Graph::new(
            vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![0, 2]],
            Array2::<f64>::ones((4, 1)),
            0,
        )
        .unwrap();
        let h = propagate(&g, 3, true);
        for v in h.iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn relu_clamps_single_node() {
        let g = Graph::new(vec![vec![]], array![[1.0, -1.0]], 0).unwrap();
        let params = SgcnParams {
            theta: Array2::eye(2),
            depth: 3,
            normalize_adjacency: false,
            init_seed: 0,
        };
        let e = embed_graph(&g, &params).unwrap();
        assert_eq!(e.support, array![[1.0, 0.0]]);
        assert_eq!(e.relu_mask, array![[1.0, 0.0]]);
        let d = e.distribution().unwrap();
        assert_eq!(d.weights().to_vec(), vec![1.0]);
    }

    #[test]
    fn zero_theta_gives_zero_distance_between_graphs() {
        let g1 = path2();
        let g2 = Graph::new(vec![vec![]], array![[7.0, -2.0]], 1).unwrap();
        let params = SgcnParams {
            theta: Array2::zeros((2, 2)),
            depth: 1,
            normalize_adjacency: false,
            init_seed: 0,
        };
        let d1 = embed_graph(&g1, &params).unwrap().distribution().unwrap();
        let d2 = embed_graph(&g2, &params).unwrap().distribution().unwrap();
        let dist = crate::ot::rpw2(&d1, &d2, crate::ot::Rpw2Impl::Sequential).unwrap();
        assert_eq!(dist, 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let g = path2();
        let params = SgcnParams::init(2, 2, 1, false, 7).unwrap();
        let h = propagate(&g, 1, false);
        let e = embed(&h, &params.theta).unwrap();
        let grad = embed_gradient(&h, &e.relu_mask, &Array2::zeros((2, 2))).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_gradient_is_outer_product() {
        let g = Graph::new(vec![vec![]], array![[2.0, 3.0]], 0).unwrap();
        let theta = array![[1.0, 1.0], [1.0, 1.0]]; // all units active
        let h = propagate(&g, 0, false);
        let e = embed(&h, &theta).unwrap();
        let upstream = array![[0.5, -1.5]];
        let grad = embed_gradient(&h, &e.relu_mask, &upstream).unwrap();
        assert_eq!(grad, array![[1.0, -3.0], [1.5, -4.5]]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 100 random (graph, theta, upstream) triples against central FD of
        // the linear functional sum(upstream .* Y), skipping ReLU kinks.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0usize;
        'outer: for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let q = rng.gen_range(1..5);
            let p = rng.gen_range(1..=q);
            let attrs = Array2::from_shape_fn((n, q), |_| rng.gen_range(-1.0..1.0));
            let mut neigh = vec![Vec::new(); n];
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(0.4) {
                        neigh[i].push(j);
                        neigh[j].push(i);
                    }
                }
            }
            let g = Graph::new(neigh, attrs, 0).unwrap();
            let theta = Array2::from_shape_fn((q, p), |_| rng.gen_range(-1.0..1.0));
            let upstream = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0));
            let h = propagate(&g, 2, false);
            let e = embed(&h, &theta).unwrap();
            let grad = embed_gradient(&h, &e.relu_mask, &upstream).unwrap();

            let step = 1e-6;
            let value = |t: &Array2<f64>| -> Option<f64> {
                let e2 = embed(&h, t).unwrap();
                if e2.relu_mask != e.relu_mask {
                    return None; // mask flipped: kink neighborhood
                }
                Some((&upstream * &e2.support).sum())
            };
            let mut fd = Array2::zeros((q, p));
            for i in 0..q {
                for j in 0..p {
                    let mut tp = theta.clone();
                    tp[(i, j)] += step;
                    let mut tm = theta.clone();
                    tm[(i, j)] -= step;
                    match (value(&tp), value(&tm)) {
                        (Some(a), Some(b)) => fd[(i, j)] = (a - b) / (2.0 * step),
                        _ => continue 'outer,
                    }
                }
            }
            let denom = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let diff = (&fd - &grad).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff / denom <= 1e-4, "rel err {}", diff / denom);
            checked += 1;
        }
        assert!(checked >= 80, "too many kink skips: only {checked} checked");
    }

    #[test]
    fn node_permutation_leaves_distances_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let attrs = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let neigh = vec![vec![1, 2], vec![0], vec![0, 3], vec![2, 4], vec![3]];
        let g = Graph::new(neigh.clone(), attrs.clone(), 0).unwrap();
        // permute nodes by sigma = [2,0,4,1,3]
        let sigma = [2usize, 0, 4, 1, 3];
        let mut inv = [0usize; 5];
        for (new, &old) in sigma.iter().enumerate() {
            inv[old] = new;
        }
        let mut p_attrs = Array2::zeros((5, 3));
        let mut p_neigh = vec![Vec::new(); 5];
        for new in 0..5 {
            let old = sigma[new];
            p_attrs.row_mut(new).assign(&attrs.row(old));
            p_neigh[new] = neigh[old].iter().map(|&j| inv[j]).collect();
        }
        let gp = Graph::new(p_neigh, p_attrs, 0).unwrap();
        let other = Graph::new(
            vec![vec![1], vec![0], vec![]],
            Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0)),
            1,
        )
        .unwrap();
        let params = SgcnParams::<f64>::init(3, 2, 2, false, 11).unwrap();
        let da = embed_graph(&g, &params).unwrap().distribution().unwrap();
        let dap = embed_graph(&gp, &params).unwrap().distribution().unwrap();
        let db = embed_graph(&other, &params).unwrap().distribution().unwrap();
        let d1 = crate::ot::rpw2(&da, &db, crate::ot::Rpw2Impl::Sequential).unwrap();
        let d2 = crate::ot::rpw2(&dap, &db, crate::ot::Rpw2Impl::Sequential).unwrap();
        assert!((d1 - d2).abs() <= 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let params = SgcnParams::<f64>::init(3, 2, 4, true, 99).unwrap();
        let path = std::env::temp_dir().join(format!("sgot_theta_{}.txt", std::process::id()));
        params.save(&path).unwrap();
        let loaded = SgcnParams::<f64>::load(&path).unwrap();
        assert_eq!(loaded.theta, params.theta);
        assert_eq!(loaded.depth, 4);
        assert!(loaded.normalize_adjacency);
        assert_eq!(loaded.init_seed, 99);
        let _ = std::fs::remove_file(path);
    }

    #[test]
    fn init_respects_p_leq_q() {
        assert!(SgcnParams::<f64>::init(2, 3, 1, false, 0).is_err());
    }

}
