//! Batch training of Theta: class-cloud softmax (NCCML) and NCA losses,
//! envelope-style gradients through fixed transport plans, and Adam.
//!
//! Transport plans are piecewise constant in Theta (1-D plans depend only on
//! sort order), so each batch differentiates the squared distances while
//! holding the plans fixed, then chains through the embedding.

use crate::error::Error;
use crate::graph::{Graph, GraphDataset};
use crate::ot::{
    rpw2_axis_plans, unit_directions, DiscreteDistribution, SlicedConfig, TransportPlan,
};
use crate::scalar::Real;
use crate::sgcn::{embed, embed_gradient, propagate, Embedding, SgcnParams};
use crate::Result;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Which distribution distance backs the graph pseudo-metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Rpw2,
    Sw2,
    Pw2,
}

impl DistanceKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rpw2" => Ok(Self::Rpw2),
            "sw2" => Ok(Self::Sw2),
            "pw2" => Ok(Self::Pw2),
            other => Err(Error::Config(format!("unknown distance '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rpw2 => "rpw2",
            Self::Sw2 => "sw2",
            Self::Pw2 => "pw2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Nccml,
    Nca,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nccml" => Ok(Self::Nccml),
            "nca" => Ok(Self::Nca),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Nccml => "nccml",
            Self::Nca => "nca",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub distance: DistanceKind,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Projection sampling for sw2/pw2 training.
    pub sliced: SlicedConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.999e-2,
            epochs: 10,
            batch_size: 8,
            loss: LossKind::Nccml,
            distance: DistanceKind::Rpw2,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            sliced: SlicedConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        self.sliced.validate()
    }
}

/// Adam moment estimates for Theta.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    pub first_moment: Array2<F>,
    pub second_moment: Array2<F>,
    pub step_count: usize,
}

impl<F: Real> AdamState<F> {
    pub fn new(q: usize, p: usize) -> Self {
        Self {
            first_moment: Array2::zeros((q, p)),
            second_moment: Array2::zeros((q, p)),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, minimizing the loss.
pub fn adam_step<F: Real>(
    state: &mut AdamState<F>,
    theta: &mut Array2<F>,
    gradient: &Array2<F>,
    cfg: &TrainConfig,
) -> Result<()> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("non-finite gradient".into()));
    }
    if gradient.raw_dim() != theta.raw_dim() {
        return Err(Error::Training("gradient/theta shape mismatch".into()));
    }
    let b1 = F::of(cfg.adam_beta1);
    let b2 = F::of(cfg.adam_beta2);
    let lr = F::of(cfg.learning_rate);
    let eps = F::of(cfg.adam_epsilon);
    state.step_count += 1;
    let t = state.step_count as i32;
    let corr1 = F::one() - b1.powi(t);
    let corr2 = F::one() - b2.powi(t);
    ndarray::Zip::from(theta)
        .and(&mut state.first_moment)
        .and(&mut state.second_moment)
        .and(gradient)
        .for_each(|th, m, v, &g| {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *th = *th - lr * m_hat / (v_hat.sqrt() + eps);
        });
    Ok(())
}

/// Theta-independent propagated features, computed once per (graph, depth).
pub struct FeatureCache<F: Real> {
    h: Vec<Array2<F>>,
    pub depth: usize,
    pub normalize: bool,
}

impl<F: Real> FeatureCache<F> {
    pub fn build(dataset: &GraphDataset<F>, depth: usize, normalize: bool) -> Self {
        let h = dataset
            .graphs
            .par_iter()
            .map(|g| propagate(g, depth, normalize))
            .collect();
        Self {
            h,
            depth,
            normalize,
        }
    }

    pub fn features(&self, graph_index: usize) -> &Array2<F> {
        &self.h[graph_index]
    }
}

/// Squared graph distance plus its gradients with respect to both embedded
/// supports, under fixed transport plans.
fn squared_distance_with_grads<F: Real>(
    ya: &Array2<F>,
    yb: &Array2<F>,
    kind: DistanceKind,
    sliced: &SlicedConfig,
) -> Result<(F, Array2<F>, Array2<F>)> {
    let da = DiscreteDistribution::uniform(ya.clone())?;
    let db = DiscreteDistribution::uniform(yb.clone())?;
    let p = ya.ncols();
    let mut ga = Array2::zeros(ya.raw_dim());
    let mut gb = Array2::zeros(yb.raw_dim());
    let mut d2 = F::zero();
    match kind {
        DistanceKind::Rpw2 => {
            let plans = rpw2_axis_plans(&da, &db)?;
            let scale = F::of(2.0 / p as f64);
            let inv_p = F::one() / F::of(p as f64);
            for plan in &plans {
                for &(i, j, m) in &plan.entries {
                    let mut c = F::zero();
                    for k in 0..p {
                        let diff = ya[(i, k)] - yb[(j, k)];
                        c += diff * diff;
                        ga[(i, k)] += scale * m * diff;
                        gb[(j, k)] -= scale * m * diff;
                    }
                    d2 += inv_p * m * c;
                }
            }
        }
        DistanceKind::Sw2 | DistanceKind::Pw2 => {
            let dirs = unit_directions::<F>(sliced.num_projections, p, sliced.rng_seed);
            let inv_m = F::one() / F::of(sliced.num_projections as f64);
            let scale = F::of(2.0) * inv_m;
            for dir in dirs.rows() {
                let px = ya.dot(&dir);
                let py = yb.dot(&dir);
                let pda = DiscreteDistribution::new(
                    px.clone().insert_axis(ndarray::Axis(1)),
                    da.weights().clone(),
                )?;
                let pdb = DiscreteDistribution::new(
                    py.clone().insert_axis(ndarray::Axis(1)),
                    db.weights().clone(),
                )?;
                let (plan, _) = crate::ot::wasserstein_1d(&pda, &pdb)?;
                for &(i, j, m) in &plan.entries {
                    match kind {
                        DistanceKind::Sw2 => {
                            let diff = px[i] - py[j];
                            d2 += inv_m * m * diff * diff;
                            for k in 0..p {
                                ga[(i, k)] += scale * m * diff * dir[k];
                                gb[(j, k)] -= scale * m * diff * dir[k];
                            }
                        }
                        DistanceKind::Pw2 => {
                            for k in 0..p {
                                let diff = ya[(i, k)] - yb[(j, k)];
                                d2 += inv_m * m * diff * diff;
                                ga[(i, k)] += scale * m * diff;
                                gb[(j, k)] -= scale * m * diff;
                            }
                        }
                        DistanceKind::Rpw2 => unreachable!(),
                    }
                }
            }
            if kind == DistanceKind::Pw2 {
                // the p-axis loop above folded the squared norm once per axis
                // already; nothing extra to do
            }
        }
    }
    Ok((d2, ga, gb))
}

/// Parametric graph distance: embed both graphs and compare distributions.
/// Returns the per-axis (or per-direction) transport plans for gradient reuse.
pub fn pairwise_graph_distance<F: Real>(
    g1: &Graph<F>,
    g2: &Graph<F>,
    params: &SgcnParams<F>,
    kind: DistanceKind,
    sliced: &SlicedConfig,
) -> Result<(F, Vec<TransportPlan<F>>)> {
    if g1.attr_dim() != g2.attr_dim() || g1.attr_dim() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            left: g1.attr_dim(),
            right: params.input_dim(),
        });
    }
    let e1 = crate::sgcn::embed_graph(g1, params)?;
    let e2 = crate::sgcn::embed_graph(g2, params)?;
    let d1 = e1.distribution()?;
    let d2 = e2.distribution()?;
    match kind {
        DistanceKind::Rpw2 => {
            let plans = rpw2_axis_plans(&d1, &d2)?;
            let dist = crate::ot::rpw2(&d1, &d2, crate::ot::Rpw2Impl::Sequential)?;
            Ok((dist, plans))
        }
        DistanceKind::Sw2 => {
            let dist = crate::ot::sw2(&d1, &d2, sliced)?;
            Ok((dist, direction_plans(&d1, &d2, sliced)?))
        }
        DistanceKind::Pw2 => {
            let dist = crate::ot::pw2(&d1, &d2, sliced)?;
            Ok((dist, direction_plans(&d1, &d2, sliced)?))
        }
    }
}

fn direction_plans<F: Real>(
    d1: &DiscreteDistribution<F>,
    d2: &DiscreteDistribution<F>,
    sliced: &SlicedConfig,
) -> Result<Vec<TransportPlan<F>>> {
    let dirs = unit_directions::<F>(sliced.num_projections, d1.dim(), sliced.rng_seed);
    let mut plans = Vec::with_capacity(sliced.num_projections);
    for dir in dirs.rows() {
        let px = d1.support().dot(&dir).insert_axis(ndarray::Axis(1));
        let py = d2.support().dot(&dir).insert_axis(ndarray::Axis(1));
        let pa = DiscreteDistribution::new(px, d1.weights().clone())?;
        let pb = DiscreteDistribution::new(py, d2.weights().clone())?;
        let (plan, _) = crate::ot::wasserstein_1d(&pa, &pb)?;
        plans.push(plan);
    }
    Ok(plans)
}

/// NCCML on a precomputed symmetric squared-distance matrix.
///
/// Returns the loss and `dLoss/dD2`, a symmetric matrix with zero diagonal.
/// The softmax runs over the classes present in the batch; the anchor is
/// included in its own class sum (its self-distance contributes exactly 0).
pub fn nccml_from_squared_distances<F: Real>(
    d2: &Array2<F>,
    labels: &[usize],
) -> Result<(F, Array2<F>)> {
    let b = labels.len();
    if d2.nrows() != b || d2.ncols() != b {
        return Err(Error::Loss("distance matrix / label size mismatch".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Loss(
            "batch contains a single class: softmax denominator degenerates".into(),
        ));
    }
    let class_pos = |l: usize| classes.binary_search(&l).expect("label present");

    let mut loss = F::zero();
    // prob[a][c]: posterior of class c for anchor a
    let mut prob = Array2::zeros((b, classes.len()));
    for a in 0..b {
        let mut scores: Vec<F> = vec![F::zero(); classes.len()];
        for i in 0..b {
            scores[class_pos(labels[i])] += d2[(a, i)];
        }
        // stable softmax of -scores
        let min_score = scores.iter().copied().fold(F::infinity(), F::min);
        let mut denom = F::zero();
        for (c, &s) in scores.iter().enumerate() {
            let e = (-(s - min_score)).exp();
            prob[(a, c)] = e;
            denom += e;
        }
        for c in 0..classes.len() {
            prob[(a, c)] /= denom;
        }
        let own = class_pos(labels[a]);
        loss -= prob[(a, own)].ln();
    }

    let mut grad = Array2::zeros((b, b));
    for a in 0..b {
        for i in 0..b {
            if a == i {
                continue;
            }
            // d loss_a / d s_{a,e} = [e = label_a] - p(e|a), s_{a,e} sums d2(a, members of e)
            let ci = class_pos(labels[i]);
            let own_a = F::of(f64::from(labels[i] == labels[a]));
            grad[(a, i)] += own_a - prob[(a, ci)];
        }
    }
    // symmetrize: d2(a,b) = d2(b,a) is a single quantity
    let grad_t = grad.t().to_owned();
    Ok((loss, grad + grad_t))
}

/// NCA objective on a precomputed squared-distance matrix, as a minimizable
/// loss (negated sum of same-label pair probabilities under the global
/// softmax over ordered cross pairs).
pub fn nca_from_squared_distances<F: Real>(
    d2: &Array2<F>,
    labels: &[usize],
) -> Result<(F, Array2<F>)> {
    let b = labels.len();
    if d2.nrows() != b || d2.ncols() != b {
        return Err(Error::Loss("distance matrix / label size mismatch".into()));
    }
    if b < 2 {
        return Err(Error::Loss("need at least two elements".into()));
    }
    // shift for numerical stability; cancels in every ratio
    let mut min_d2 = F::infinity();
    for a in 0..b {
        for i in 0..b {
            if a != i {
                min_d2 = min_d2.min(d2[(a, i)]);
            }
        }
    }
    let mut total = F::zero();
    let mut same = F::zero();
    let mut e = Array2::zeros((b, b));
    for a in 0..b {
        for i in 0..b {
            if a == i {
                continue;
            }
            let v = (-(d2[(a, i)] - min_d2)).exp();
            e[(a, i)] = v;
            total += v;
            if labels[a] == labels[i] {
                same += v;
            }
        }
    }
    let loss = -(same / total);
    let mut grad = Array2::zeros((b, b));
    for a in 0..b {
        for i in (a + 1)..b {
            let same_pair = F::of(f64::from(labels[a] == labels[i]));
            // both ordered directions carry the same weight
            let coeff = (F::of(2.0) * e[(a, i)] / total) * (same_pair - same / total);
            grad[(a, i)] = coeff;
            grad[(i, a)] = coeff;
        }
    }
    Ok((loss, grad))
}

fn batch_loss_grad<F: Real>(
    batch: &[usize],
    dataset: &GraphDataset<F>,
    cache: &FeatureCache<F>,
    theta: &Array2<F>,
    cfg: &TrainConfig,
) -> Result<(F, Array2<F>)> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::Loss("batch must have >= 2 graphs".into()));
    }
    let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();

    let embeddings: Vec<Embedding<F>> = batch
        .iter()
        .map(|&i| embed(cache.features(i), theta))
        .collect::<Result<_>>()?;

    // all within-batch pairs, in parallel but in a fixed order
    let pairs: Vec<(usize, usize)> = (0..b)
        .flat_map(|a| ((a + 1)..b).map(move |i| (a, i)))
        .collect();
    let pair_results: Vec<(F, Array2<F>, Array2<F>)> = pairs
        .par_iter()
        .map(|&(a, i)| {
            squared_distance_with_grads(
                &embeddings[a].support,
                &embeddings[i].support,
                cfg.distance,
                &cfg.sliced,
            )
        })
        .collect::<Result<_>>()?;

    let mut d2 = Array2::zeros((b, b));
    for (&(a, i), (dist2, _, _)) in pairs.iter().zip(&pair_results) {
        d2[(a, i)] = *dist2;
        d2[(i, a)] = *dist2;
    }

    let (loss, dl_dd2) = match cfg.loss {
        LossKind::Nccml => nccml_from_squared_distances(&d2, &labels)?,
        LossKind::Nca => nca_from_squared_distances(&d2, &labels)?,
    };

    // chain: upstream per embedded support, then through the embedding
    let mut upstream: Vec<Array2<F>> = embeddings
        .iter()
        .map(|e| Array2::zeros(e.support.raw_dim()))
        .collect();
    for (&(a, i), (_, ga, gi)) in pairs.iter().zip(&pair_results) {
        let w = dl_dd2[(a, i)];
        if w != F::zero() {
            upstream[a].zip_mut_with(ga, |u, &g| *u += w * g);
            upstream[i].zip_mut_with(gi, |u, &g| *u += w * g);
        }
    }
    let mut grad = Array2::zeros(theta.raw_dim());
    for ((&idx, e), up) in batch.iter().zip(&embeddings).zip(&upstream) {
        grad += &embed_gradient(cache.features(idx), &e.relu_mask, up)?;
    }
    Ok((loss, grad))
}

/// NCCML loss and Theta-gradient for one batch of graph indices.
pub fn nccml_loss<F: Real>(
    batch: &[usize],
    dataset: &GraphDataset<F>,
    cache: &FeatureCache<F>,
    params: &SgcnParams<F>,
    cfg: &TrainConfig,
) -> Result<(F, Array2<F>)> {
    let cfg = TrainConfig {
        loss: LossKind::Nccml,
        ..cfg.clone()
    };
    batch_loss_grad(batch, dataset, cache, &params.theta, &cfg)
}

/// NCA loss and Theta-gradient for one batch of graph indices.
pub fn nca_loss<F: Real>(
    batch: &[usize],
    dataset: &GraphDataset<F>,
    cache: &FeatureCache<F>,
    params: &SgcnParams<F>,
    cfg: &TrainConfig,
) -> Result<(F, Array2<F>)> {
    let cfg = TrainConfig {
        loss: LossKind::Nca,
        ..cfg.clone()
    };
    batch_loss_grad(batch, dataset, cache, &params.theta, &cfg)
}

#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// Write the loss trace as CSV `epoch,batch,loss`.
pub fn write_loss_history(path: &std::path::Path, history: &[LossRecord]) -> Result<()> {
    let mut out = String::from("epoch,batch,loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.batch, r.loss));
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Partition shuffled indices into batches of `size`, merging any
/// single-class batch into its neighbor so every labeled graph keeps
/// contributing each epoch.
fn make_batches(indices: &[usize], labels: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = indices.chunks(size).map(|c| c.to_vec()).collect();
    let single_class = |batch: &[usize]| -> bool {
        batch.len() < 2 || batch.iter().all(|&i| labels[i] == labels[batch[0]])
    };
    let mut k = 0;
    while k < batches.len() {
        if batches.len() > 1 && single_class(&batches[k]) {
            let moved = batches.remove(k);
            if k < batches.len() {
                let mut merged = moved;
                merged.extend_from_slice(&batches[k]);
                batches[k] = merged;
            } else {
                batches[k - 1].extend_from_slice(&moved);
            }
        } else {
            k += 1;
        }
    }
    batches
}

/// The full training loop: seeded shuffles, batch losses, Adam steps.
pub fn train<F: Real>(
    dataset: &GraphDataset<F>,
    train_indices: &[usize],
    params: SgcnParams<F>,
    cfg: &TrainConfig,
) -> Result<(SgcnParams<F>, Vec<LossRecord>)> {
    cfg.validate()?;
    let mut distinct: Vec<usize> = train_indices.iter().map(|&i| dataset.labels[i]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Training(
            "training indices must span at least two classes".into(),
        ));
    }
    let cache = FeatureCache::build(dataset, params.depth, params.normalize_adjacency);
    let mut params = params;
    let mut state = AdamState::new(params.input_dim(), params.output_dim());
    let mut history = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        let mut order = train_indices.to_vec();
        order.shuffle(&mut rng);
        let batches = make_batches(&order, &dataset.labels, cfg.batch_size);
        for (batch_no, batch) in batches.iter().enumerate() {
            let (loss, grad) = batch_loss_grad(batch, dataset, &cache, &params.theta, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no} (graphs {batch:?})"
                )));
            }
            adam_step(&mut state, &mut params.theta, &grad, cfg)?;
            history.push(LossRecord {
                epoch,
                batch: batch_no,
                loss: loss.as_f64(),
            });
        }
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn nccml_two_graphs_two_classes() {
        // d(G1,G2)^2 = 1: p(own|G) = 1/(1+e^-1), loss = -2 ln p
        let d2 = array![[0.0, 1.0], [1.0, 0.0]];
        let (loss, _) = nccml_from_squared_distances(&d2, &[0, 1]).unwrap();
        let p = 1.0 / (1.0 + (-1.0f64).exp());
        assert_relative_eq!(p, 0.7310585786300049, max_relative = 1e-12);
        assert_relative_eq!(loss, -2.0 * p.ln(), max_relative = 1e-12);
        assert_relative_eq!(loss, 0.6265233750364456, max_relative = 1e-10);
    }

    #[test]
    fn nccml_three_graphs_self_term_contributes_zero() {
        // labels (a, a, b); d2(1,2)=1, d2(1,3)=4, d2(2,3)=1
        let d2 = array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]];
        let labels = [0usize, 0, 1];
        // independent scripted softmax for anchor G1
        let s_a = 0.0 + 1.0; // self + same-class
        let s_b = 4.0;
        let p_a1 = (-s_a as f64).exp() / ((-s_a as f64).exp() + (-s_b as f64).exp());
        assert_relative_eq!(p_a1, 0.9525741268224334, max_relative = 1e-12);
        let (loss, _) = nccml_from_squared_distances(&d2, &labels).unwrap();
        // full oracle over all anchors
        let mut expected = 0.0;
        for a in 0..3 {
            let mut s = [0.0f64; 2];
            for i in 0..3 {
                s[labels[i]] += d2[(a, i)];
            }
            let z = (-s[0]).exp() + (-s[1]).exp();
            expected -= ((-s[labels[a]]).exp() / z).ln();
        }
        assert_relative_eq!(loss, expected, max_relative = 1e-12);
    }

    #[test]
    fn nccml_all_zero_distances_uniform_probabilities() {
        let d2 = Array2::<f64>::zeros((4, 4));
        let labels = [0usize, 1, 2, 0];
        let (loss, _) = nccml_from_squared_distances(&d2, &labels).unwrap();
        // every posterior is 1/3
        assert_relative_eq!(loss, 4.0 * (3.0f64).ln(), max_relative = 1e-12);
    }

    #[test]
    fn nccml_single_class_batch_rejected() {
        let d2 = Array2::<f64>::zeros((2, 2));
        assert!(nccml_from_squared_distances(&d2, &[1, 1]).is_err());
    }

    #[test]
    fn nccml_gradient_matches_finite_differences_in_d2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = 5;
        let labels = [0usize, 1, 0, 2, 1];
        let mut d2 = Array2::<f64>::zeros((b, b));
        for a in 0..b {
            for i in (a + 1)..b {
                let v = rng.gen_range(0.1..3.0);
                d2[(a, i)] = v;
                d2[(i, a)] = v;
            }
        }
        let (_, grad) = nccml_from_squared_distances(&d2, &labels).unwrap();
        let h = 1e-6;
        for a in 0..b {
            for i in (a + 1)..b {
                let mut dp = d2.clone();
                dp[(a, i)] += h;
                dp[(i, a)] += h;
                let mut dm = d2.clone();
                dm[(a, i)] -= h;
                dm[(i, a)] -= h;
                let (lp, _) = nccml_from_squared_distances(&dp, &labels).unwrap();
                let (lm, _) = nccml_from_squared_distances(&dm, &labels).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert_relative_eq!(grad[(a, i)], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn nca_two_same_label_graphs() {
        // single unordered pair: p = e^{-d2} / (2 e^{-d2}) = 1/2 per direction
        let d2 = array![[0.0, 0.7], [0.7, 0.0]];
        let (loss, _) = nca_from_squared_distances(&d2, &[3, 3]).unwrap();
        assert_relative_eq!(loss, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn nca_uniform_distances_uniform_pair_probabilities() {
        let d2 = array![[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]];
        let labels = [0usize, 0, 1];
        let (loss, _) = nca_from_squared_distances(&d2, &labels).unwrap();
        // 6 ordered pairs, 2 of them same-label, all weights equal
        assert_relative_eq!(loss, -2.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn nca_differs_from_nccml_on_same_inputs() {
        let d2 = array![[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]];
        let labels = [0usize, 0, 1];
        let (nccml, _): (f64, _) = nccml_from_squared_distances(&d2, &labels).unwrap();
        let (nca, _) = nca_from_squared_distances(&d2, &labels).unwrap();
        assert!((nccml - nca).abs() > 1e-6);
    }

    #[test]
    fn nca_gradient_matches_finite_differences_in_d2() {
        let labels = [0usize, 1, 0, 1];
        let d2 = array![
            [0.0, 1.3, 0.4, 2.0],
            [1.3, 0.0, 0.9, 0.2],
            [0.4, 0.9, 0.0, 1.1],
            [2.0, 0.2, 1.1, 0.0]
        ];
        let (_, grad) = nca_from_squared_distances(&d2, &labels).unwrap();
        let h = 1e-6;
        for a in 0..4 {
            for i in (a + 1)..4 {
                let mut dp = d2.clone();
                dp[(a, i)] += h;
                dp[(i, a)] += h;
                let mut dm = d2.clone();
                dm[(a, i)] -= h;
                dm[(i, a)] -= h;
                let (lp, _) = nca_from_squared_distances(&dp, &labels).unwrap();
                let (lm, _) = nca_from_squared_distances(&dm, &labels).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert_relative_eq!(grad[(a, i)], fd, max_relative = 1e-4, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_theta() {
        let cfg = TrainConfig::default();
        let mut theta = array![[1.0, 2.0], [3.0, 4.0]];
        let before = theta.clone();
        let mut state = AdamState::new(2, 2);
        adam_step(&mut state, &mut theta, &Array2::zeros((2, 2)), &cfg).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let cfg = TrainConfig::default();
        let mut theta = array![[0.0]];
        let mut state = AdamState::new(1, 1);
        adam_step(&mut state, &mut theta, &array![[2.5]], &cfg).unwrap();
        // bias correction makes m_hat/sqrt(v_hat) = sign(g) up to epsilon
        assert_relative_eq!(theta[(0, 0)], -cfg.learning_rate, max_relative = 1e-4);
    }

    #[test]
    fn adam_two_steps_match_hand_recurrence() {
        let cfg = TrainConfig::default();
        let g = 2.5f64;
        let mut theta = array![[0.0]];
        let mut state = AdamState::new(1, 1);
        adam_step(&mut state, &mut theta, &array![[g]], &cfg).unwrap();
        adam_step(&mut state, &mut theta, &array![[g]], &cfg).unwrap();
        // scripted recurrence
        let (b1, b2, lr, eps) = (0.9, 0.999, cfg.learning_rate, 1e-8);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut x = 0.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1f64_pow(b1, t));
            let vh = v / (1.0 - b1f64_pow(b2, t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert_relative_eq!(theta[(0, 0)], x, max_relative = 1e-12);
    }

    fn b1f64_pow(b: f64, t: usize) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let cfg = TrainConfig::default();
        let mut theta = array![[0.0]];
        let mut state = AdamState::new(1, 1);
        assert!(adam_step(&mut state, &mut theta, &array![[f64::NAN]], &cfg).is_err());
    }

    fn toy_dataset(seed: u64) -> GraphDataset<f64> {
        // 8 graphs, 2 well-separated classes by attribute sign
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let class = i % 2;
            let n = rng.gen_range(2..5);
            let shift = if class == 0 { 0.4 } else { -0.4 };
            let attrs = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-0.6..0.6) + shift);
            let mut neigh = vec![Vec::new(); n];
            for a in 0..n.saturating_sub(1) {
                neigh[a].push(a + 1);
                neigh[a + 1].push(a);
            }
            graphs.push(Graph::new(neigh, attrs, i).unwrap());
            labels.push(class);
        }
        GraphDataset::new(graphs, labels, vec![0, 1], "toy".into()).unwrap()
    }

    #[test]
    fn training_reduces_loss_on_separable_toy_data() {
        let mut informative = 0usize;
        for seed in 0..5u64 {
            let ds = toy_dataset(seed);
            let params = SgcnParams::init(3, 2, 1, false, seed + 100).unwrap();
            let cfg = TrainConfig {
                epochs: 10,
                batch_size: 4,
                seed,
                ..TrainConfig::default()
            };
            let idx: Vec<usize> = (0..ds.len()).collect();
            let (_, history) = train(&ds, &idx, params, &cfg).unwrap();
            let epoch_mean = |e: usize| {
                let v: Vec<f64> = history
                    .iter()
                    .filter(|r| r.epoch == e)
                    .map(|r| r.loss)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            let first = epoch_mean(0);
            let last = epoch_mean(cfg.epochs - 1);
            if first < 1e-3 {
                // random init already separates this draw; nothing to learn
                continue;
            }
            informative += 1;
            assert!(last < first, "seed {seed}: {first} -> {last}");
        }
        assert!(informative >= 3, "only {informative} informative seeds");
    }

    #[test]
    fn training_is_reproducible() {
        let ds = toy_dataset(3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let idx: Vec<usize> = (0..ds.len()).collect();
        let run = || {
            let params = SgcnParams::init(3, 2, 1, false, 7).unwrap();
            train(&ds, &idx, params, &cfg).unwrap()
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(p1.theta, p2.theta);
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.loss, b.loss);
        }
    }

    #[test]
    fn loss_invariant_under_batch_reordering() {
        let ds = toy_dataset(1);
        let cfg = TrainConfig::default();
        let cache = FeatureCache::build(&ds, 1, false);
        let params = SgcnParams::init(3, 2, 1, false, 5).unwrap();
        let batch = [0usize, 1, 2, 3];
        let reordered = [3usize, 1, 0, 2];
        let (l1, g1) = nccml_loss(&batch, &ds, &cache, &params, &cfg).unwrap();
        let (l2, g2) = nccml_loss(&reordered, &ds, &cache, &params, &cfg).unwrap();
        assert_relative_eq!(l1, l2, max_relative = 1e-12);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn theta_rescaling_scales_distances_linearly() {
        let ds = toy_dataset(2);
        let params = SgcnParams::init(3, 2, 1, false, 13).unwrap();
        let cfg = TrainConfig::default();
        let (d, _) = pairwise_graph_distance(
            &ds.graphs[0],
            &ds.graphs[1],
            &params,
            DistanceKind::Rpw2,
            &cfg.sliced,
        )
        .unwrap();
        let c = 3.5;
        let scaled = SgcnParams {
            theta: params.theta.mapv(|v| v * c),
            ..params.clone()
        };
        let (dc, _) = pairwise_graph_distance(
            &ds.graphs[0],
            &ds.graphs[1],
            &scaled,
            DistanceKind::Rpw2,
            &cfg.sliced,
        )
        .unwrap();
        assert_relative_eq!(dc, c * d, max_relative = 1e-10);
    }

    #[test]
    fn pairwise_distance_matches_ot_core_composition() {
        let ds = toy_dataset(4);
        let params = SgcnParams::init(3, 2, 2, false, 21).unwrap();
        let cfg = TrainConfig::default();
        let (d, plans) = pairwise_graph_distance(
            &ds.graphs[2],
            &ds.graphs[5],
            &params,
            DistanceKind::Rpw2,
            &cfg.sliced,
        )
        .unwrap();
        let e1 = crate::sgcn::embed_graph(&ds.graphs[2], &params).unwrap();
        let e2 = crate::sgcn::embed_graph(&ds.graphs[5], &params).unwrap();
        let d1 = e1.distribution().unwrap();
        let d2m = e2.distribution().unwrap();
        let direct = crate::ot::rpw2(&d1, &d2m, crate::ot::Rpw2Impl::Sequential).unwrap();
        assert_eq!(d, direct);
        assert_eq!(plans.len(), 2);
        // same-graph distance is zero
        let (dz, _) = pairwise_graph_distance(
            &ds.graphs[2],
            &ds.graphs[2],
            &params,
            DistanceKind::Rpw2,
            &cfg.sliced,
        )
        .unwrap();
        assert_eq!(dz, 0.0);
    }

    #[test]
    fn single_node_dirac_pair_distance() {
        let g1 = Graph::new(vec![vec![]], array![[1.0, 0.0]], 0).unwrap();
        let g2 = Graph::new(vec![vec![]], array![[0.0, 0.0]], 1).unwrap();
        let params = SgcnParams {
            theta: Array2::eye(2),
            depth: 0,
            normalize_adjacency: false,
            init_seed: 0,
        };
        let (d, _) = pairwise_graph_distance(
            &g1,
            &g2,
            &params,
            DistanceKind::Rpw2,
            &SlicedConfig::default(),
        )
        .unwrap();
        assert_relative_eq!(d, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn batches_merge_single_class_chunks() {
        // indices laid out so one chunk is single-class
        let labels = vec![0, 0, 0, 0, 1, 1];
        let order = vec![0, 1, 2, 3, 4, 5];
        let batches = make_batches(&order, &labels, 4);
        assert!(batches
            .iter()
            .all(|b| b.iter().map(|&i| labels[i]).collect::<std::collections::HashSet<_>>().len() >= 2),
            "{batches:?}");
    }

    #[test]
    fn train_rejects_invalid_config_and_single_class() {
        let ds = toy_dataset(0);
        let params = SgcnParams::init(3, 2, 1, false, 0).unwrap();
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let idx: Vec<usize> = (0..ds.len()).collect();
        assert!(train(&ds, &idx, params.clone(), &bad).is_err());
        let single: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 0).collect();
        assert!(train(&ds, &single, params, &TrainConfig::default()).is_err());
    }
}
