//! Distances between discrete distributions.
//!
//! Everything here compares weighted point clouds in `R^p`. The workhorse is
//! the monotone (sorted north-west-corner) coupling for one-dimensional
//! optimal transport, from which the sliced (`sw2`), projected (`pw2`) and
//! coordinate-projected (`rpw2`) distances are assembled. A small exact
//! W2 oracle for cross-checking lives in [`oracle`].

mod oracle;

pub use oracle::{exact_w2_oracle, ORACLE_SIZE_CAP};

use crate::error::Error;
use crate::scalar::Real;
use crate::Result;
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Weighted point cloud in `R^p` with strictly positive weights summing to 1.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution<F: Real> {
    support: Array2<F>,
    weights: Array1<F>,
}

impl<F: Real> DiscreteDistribution<F> {
    /// Weight sums within this tolerance of 1 are renormalized; anything
    /// further off is rejected.
    pub const WEIGHT_SUM_SLACK: f64 = 1e-9;

    pub fn new(support: Array2<F>, weights: Array1<F>) -> Result<Self> {
        let n = support.nrows();
        if n == 0 {
            return Err(Error::Distribution("empty support".into()));
        }
        if weights.len() != n {
            return Err(Error::Distribution(format!(
                "{} weights for {} support points",
                weights.len(),
                n
            )));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::Distribution("non-finite support".into()));
        }
        if weights.iter().any(|w| !(*w > F::zero()) || !w.is_finite()) {
            return Err(Error::Distribution("weights must be strictly positive".into()));
        }
        let sum: F = weights.iter().copied().sum();
        if (sum.as_f64() - 1.0).abs() > Self::WEIGHT_SUM_SLACK {
            return Err(Error::Distribution(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        let weights = weights.mapv(|w| w / sum);
        Ok(Self { support, weights })
    }

    /// Uniform weights `1/n` on the given support rows.
    pub fn uniform(support: Array2<F>) -> Result<Self> {
        let n = support.nrows();
        if n == 0 {
            return Err(Error::Distribution("empty support".into()));
        }
        let w = Array1::from_elem(n, F::one() / F::of(n as f64));
        Self::new(support, w)
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty supports
    }

    /// Ambient dimension p.
    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn support(&self) -> &Array2<F> {
        &self.support
    }

    pub fn weights(&self) -> &Array1<F> {
        &self.weights
    }
}

/// Sparse coupling between two distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<F: Real> {
    pub entries: Vec<(usize, usize, F)>,
    pub source_size: usize,
    pub target_size: usize,
}

impl<F: Real> TransportPlan<F> {
    /// Row and column marginals of the plan.
    pub fn marginals(&self) -> (Array1<F>, Array1<F>) {
        let mut row = Array1::zeros(self.source_size);
        let mut col = Array1::zeros(self.target_size);
        for &(i, j, m) in &self.entries {
            row[i] += m;
            col[j] += m;
        }
        (row, col)
    }

    /// Debug serialization, one `i,j,mass` line per entry.
    pub fn to_debug_string(&self) -> String {
        let mut out = String::new();
        for &(i, j, m) in &self.entries {
            out.push_str(&format!("{i},{j},{m}\n"));
        }
        out
    }
}

/// Monte-Carlo configuration for the sliced distances.
#[derive(Debug, Clone, Copy)]
pub struct SlicedConfig {
    /// Number of sampled projection directions.
    pub num_projections: usize,
    pub rng_seed: u64,
}

impl Default for SlicedConfig {
    fn default() -> Self {
        Self {
            num_projections: 50,
            rng_seed: 0,
        }
    }
}

impl SlicedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_projections == 0 {
            return Err(Error::Config("num_projections must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which realization of the coordinate-projected distance to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rpw2Impl {
    /// O(n) memory merge, never materializes the cost matrix.
    Sequential,
    /// Precomputes the full n x n' squared-cost matrix once and contracts
    /// the per-axis plans against it.
    Quadratic,
}

/// Stable argsort of `values`; equal values keep index order.
fn argsort_by_key<F: Real>(len: usize, key: impl Fn(usize) -> F) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).expect("finite values"));
    idx
}

/// Walk the monotone coupling of two sorted 1-D distributions, calling
/// `visit(i, j, mass)` with original indices for every positive entry.
fn monotone_merge<F: Real>(
    a: &Array1<F>,
    order_a: &[usize],
    b: &Array1<F>,
    order_b: &[usize],
    mut visit: impl FnMut(usize, usize, F),
) {
    let n = order_a.len();
    let m = order_b.len();
    let (mut i, mut j) = (0usize, 0usize);
    let mut wa = a[order_a[0]];
    let mut wb = b[order_b[0]];
    loop {
        let mass = wa.min(wb);
        if mass > F::zero() {
            visit(order_a[i], order_b[j], mass);
        }
        wa = wa - mass;
        wb = wb - mass;
        if wa <= F::zero() {
            i += 1;
            if i == n {
                break;
            }
            wa = a[order_a[i]];
        } else {
            j += 1;
            if j == m {
                break;
            }
            wb = b[order_b[j]];
        }
    }
}

fn squared_distance<F: Real>(x: ArrayView1<F>, y: ArrayView1<F>) -> F {
    x.iter()
        .zip(y.iter())
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Optimal transport between one-dimensional distributions by sorted merge.
///
/// Returns the monotone coupling and the squared transport cost
/// `sum pi_ij (x_i - x'_j)^2`.
pub fn wasserstein_1d<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
) -> Result<(TransportPlan<F>, F)> {
    if source.dim() != 1 || target.dim() != 1 {
        return Err(Error::DimensionMismatch {
            left: source.dim(),
            right: target.dim(),
        });
    }
    let xa = source.support().column(0);
    let xb = target.support().column(0);
    let order_a = argsort_by_key(source.len(), |i| xa[i]);
    let order_b = argsort_by_key(target.len(), |j| xb[j]);
    let mut entries = Vec::with_capacity(source.len() + target.len());
    let mut cost = F::zero();
    monotone_merge(source.weights(), &order_a, target.weights(), &order_b, |i, j, m| {
        let d = xa[i] - xb[j];
        cost += m * d * d;
        entries.push((i, j, m));
    });
    Ok((
        TransportPlan {
            entries,
            source_size: source.len(),
            target_size: target.len(),
        },
        cost,
    ))
}

fn check_same_dim<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
) -> Result<usize> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            left: source.dim(),
            right: target.dim(),
        });
    }
    Ok(source.dim())
}

/// Coordinate-projected Wasserstein distance.
///
/// `distance^2 = (1/p) sum_k sum_ij pi^k_ij ||x_i - x'_j||^2` where `pi^k` is
/// the monotone 1-D plan on coordinate k. Among co-optimal projected plans the
/// one induced by the stable sort is used.
pub fn rpw2<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
    variant: Rpw2Impl,
) -> Result<F> {
    let p = check_same_dim(source, target)?;
    let total = match variant {
        Rpw2Impl::Sequential => rpw2_sequential_total(source, target, p),
        Rpw2Impl::Quadratic => rpw2_quadratic_total(source, target, p),
    };
    Ok((total / F::of(p as f64)).max(F::zero()).sqrt())
}

/// Per-axis transport plans of the coordinate projections, for gradient reuse.
pub fn rpw2_axis_plans<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
) -> Result<Vec<TransportPlan<F>>> {
    let p = check_same_dim(source, target)?;
    let mut plans = Vec::with_capacity(p);
    for k in 0..p {
        let xk = source.support().column(k);
        let yk = target.support().column(k);
        let order_a = argsort_by_key(source.len(), |i| xk[i]);
        let order_b = argsort_by_key(target.len(), |j| yk[j]);
        let mut entries = Vec::with_capacity(source.len() + target.len());
        monotone_merge(source.weights(), &order_a, target.weights(), &order_b, |i, j, m| {
            entries.push((i, j, m));
        });
        plans.push(TransportPlan {
            entries,
            source_size: source.len(),
            target_size: target.len(),
        });
    }
    Ok(plans)
}

fn rpw2_sequential_total<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
    p: usize,
) -> F {
    let xs = source.support();
    let ys = target.support();
    let mut total = F::zero();
    for k in 0..p {
        let xk = xs.column(k);
        let yk = ys.column(k);
        let order_a = argsort_by_key(source.len(), |i| xk[i]);
        let order_b = argsort_by_key(target.len(), |j| yk[j]);
        monotone_merge(source.weights(), &order_a, target.weights(), &order_b, |i, j, m| {
            total += m * squared_distance(xs.row(i), ys.row(j));
        });
    }
    total
}

/// Full pairwise squared-cost matrix `C[i][j] = ||x_i - y_j||^2` using the
/// Gram expansion so the bulk of the work is one matrix product.
pub(crate) fn squared_cost_matrix<F: Real>(xs: &Array2<F>, ys: &Array2<F>) -> Array2<F> {
    let xn: Array1<F> = xs.rows().into_iter().map(|r| r.dot(&r)).collect();
    let yn: Array1<F> = ys.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut cost = xs.dot(&ys.t());
    let two = F::of(2.0);
    for ((i, j), c) in cost.indexed_iter_mut() {
        *c = (xn[i] + yn[j] - two * *c).max(F::zero());
    }
    cost
}

fn rpw2_quadratic_total<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
    p: usize,
) -> F {
    let cost = squared_cost_matrix(source.support(), target.support());
    let mut total = F::zero();
    for k in 0..p {
        let xk = source.support().column(k);
        let yk = target.support().column(k);
        let order_a = argsort_by_key(source.len(), |i| xk[i]);
        let order_b = argsort_by_key(target.len(), |j| yk[j]);
        monotone_merge(source.weights(), &order_a, target.weights(), &order_b, |i, j, m| {
            total += m * cost[(i, j)];
        });
    }
    total
}

/// Sample `m` directions uniformly on the unit sphere of `R^p`.
pub(crate) fn unit_directions<F: Real>(m: usize, p: usize, seed: u64) -> Array2<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Array2::zeros((m, p));
    for mut row in dirs.rows_mut() {
        loop {
            let mut norm2 = 0.0f64;
            for v in row.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = F::of(g);
                norm2 += g * g;
            }
            if norm2 > 0.0 {
                let inv = F::of(1.0 / norm2.sqrt());
                row.mapv_inplace(|v| v * inv);
                break;
            }
        }
    }
    dirs
}

fn projected_merge_total<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
    cfg: &SlicedConfig,
    ambient: bool,
) -> Result<F> {
    let p = check_same_dim(source, target)?;
    cfg.validate()?;
    let dirs = unit_directions::<F>(cfg.num_projections, p, cfg.rng_seed);
    let xs = source.support();
    let ys = target.support();
    let mut total = F::zero();
    for dir in dirs.rows() {
        let px = xs.dot(&dir);
        let py = ys.dot(&dir);
        let order_a = argsort_by_key(source.len(), |i| px[i]);
        let order_b = argsort_by_key(target.len(), |j| py[j]);
        monotone_merge(source.weights(), &order_a, target.weights(), &order_b, |i, j, m| {
            let c = if ambient {
                squared_distance(xs.row(i), ys.row(j))
            } else {
                let d = px[i] - py[j];
                d * d
            };
            total += m * c;
        });
    }
    Ok((total / F::of(cfg.num_projections as f64)).max(F::zero()).sqrt())
}

/// Sliced Wasserstein distance: Monte-Carlo average of squared 1-D transport
/// costs over random unit directions.
pub fn sw2<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
    cfg: &SlicedConfig,
) -> Result<F> {
    projected_merge_total(source, target, cfg, false)
}

/// Projected Wasserstein distance: like [`sw2`] but each direction's 1-D plan
/// is re-costed with ambient squared Euclidean distances.
pub fn pw2<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
    cfg: &SlicedConfig,
) -> Result<F> {
    projected_merge_total(source, target, cfg, true)
}

/// Count coordinate ties between distinct points: pairs `(i, j, k)` with
/// `x_i(k) = x'_j(k)` but `x_i != x'_j`. A positive count flags instances
/// where the tie-break among co-optimal projected plans matters.
pub fn tie_diagnostic<F: Real>(
    source: &DiscreteDistribution<F>,
    target: &DiscreteDistribution<F>,
) -> Result<usize> {
    let p = check_same_dim(source, target)?;
    let xs = source.support();
    let ys = target.support();
    let mut count = 0;
    for i in 0..source.len() {
        for j in 0..target.len() {
            let xi = xs.row(i);
            let yj = ys.row(j);
            if xi == yj {
                continue;
            }
            for k in 0..p {
                if xi[k] == yj[k] {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}
