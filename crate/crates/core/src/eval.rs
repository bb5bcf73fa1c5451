//! Distance matrices, k-NN classification, the cross-validation protocol,
//! and kernel export.
//!
//! The protocol: ten runs over fresh
//! 90/10 stratified splits, a grid over convolution depth r, and stratified
//! 5-fold cross validation over the number of neighbors k on the train split
//! only. The retained test accuracy is the one of the (r, k) pair with the
//! best validation accuracy, ties going to the cheaper model.

use crate::error::Error;
use crate::graph::{stratified_split_indices, GraphDataset};
use crate::ot::{Rpw2Impl, SlicedConfig};
use crate::scalar::Real;
use crate::sgcn::SgcnParams;
use crate::train::{train, DistanceKind, TrainConfig};
use crate::Result;
use ndarray::Array2;
use rayon::prelude::*;

/// Symmetric pairwise graph distances with an explicit row-to-graph map.
#[derive(Debug, Clone)]
pub struct DistanceMatrix<F: Real> {
    pub values: Array2<F>,
    pub index_map: Vec<usize>,
}

impl<F: Real> DistanceMatrix<F> {
    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }

    /// Distance between the graphs at matrix rows `a` and `b`.
    pub fn get(&self, a: usize, b: usize) -> F {
        self.values[(a, b)]
    }
}

/// All pairwise distances among `indices`, embedding each graph exactly once.
pub fn distance_matrix<F: Real>(
    dataset: &GraphDataset<F>,
    indices: &[usize],
    params: &SgcnParams<F>,
    kind: DistanceKind,
    sliced: &SlicedConfig,
    rpw2_impl: Rpw2Impl,
) -> Result<DistanceMatrix<F>> {
    let n = indices.len();
    let distributions: Vec<_> = indices
        .par_iter()
        .map(|&i| crate::sgcn::embed_graph(&dataset.graphs[i], params)?.distribution())
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .collect();
    let dists: Vec<F> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (da, db) = (&distributions[a], &distributions[b]);
            match kind {
                DistanceKind::Rpw2 => crate::ot::rpw2(da, db, rpw2_impl),
                DistanceKind::Sw2 => crate::ot::sw2(da, db, sliced),
                DistanceKind::Pw2 => crate::ot::pw2(da, db, sliced),
            }
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((n, n));
    for (&(a, b), &d) in pairs.iter().zip(&dists) {
        values[(a, b)] = d;
        values[(b, a)] = d;
    }
    Ok(DistanceMatrix {
        values,
        index_map: indices.to_vec(),
    })
}

/// Majority vote among the k nearest train rows.
///
/// Neighbor order is by (distance, row index). Vote ties go to the class with
/// the smaller summed distance among its tied-set neighbors, then to the
/// smaller class id.
pub fn knn_predict<F: Real>(
    train: &[(usize, usize)],
    test_row: usize,
    k: usize,
    matrix: &DistanceMatrix<F>,
) -> Result<usize> {
    if k == 0 || k > train.len() {
        return Err(Error::Protocol(format!(
            "k = {k} out of range for {} train rows",
            train.len()
        )));
    }
    let mut neighbors: Vec<(F, usize, usize)> = train
        .iter()
        .map(|&(row, label)| (matrix.get(test_row, row), row, label))
        .collect();
    neighbors.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite distances"));
    neighbors.truncate(k);

    let mut tally: Vec<(usize, usize, F)> = Vec::new(); // (label, votes, summed distance)
    for &(d, _, label) in &neighbors {
        match tally.iter_mut().find(|t| t.0 == label) {
            Some(t) => {
                t.1 += 1;
                t.2 += d;
            }
            None => tally.push((label, 1, d)),
        }
    }
    tally.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| a.2.partial_cmp(&b.2).expect("finite distances"))
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(tally[0].0)
}

/// Grids and repetition counts for the evaluation protocol.
#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub k_grid: Vec<usize>,
    pub r_grid: Vec<usize>,
    pub folds: usize,
    pub runs: usize,
    pub lambda_grid: Vec<f64>,
    /// Exported for external SVM consumers; unused internally.
    pub c_grid: Vec<f64>,
    pub seed: u64,
}

/// `count` log-spaced values between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// The exported SVM C grid: 12 log-spaced values over [1e-4, 1e5], with the
/// value nearest 1 snapped to exactly 1 so external consumers always get the
/// unregularized point.
fn c_grid_with_unit() -> Vec<f64> {
    let mut grid = log_spaced(1e-4, 1e5, 12);
    let nearest = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ln().abs().partial_cmp(&b.1.ln().abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    grid[nearest] = 1.0;
    grid
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            k_grid: vec![1, 2, 3, 5, 7],
            r_grid: vec![1, 2, 3, 4],
            folds: 5,
            runs: 10,
            lambda_grid: log_spaced(1e-4, 1e1, 6),
            c_grid: c_grid_with_unit(),
            seed: 0,
        }
    }
}

impl EvalProtocol {
    /// Depth grid extended to 7, as used for MUTAG.
    pub fn with_extended_depth(mut self) -> Self {
        self.r_grid = (1..=7).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() || self.r_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::Protocol("empty grid".into()));
        }
        if self.folds < 2 {
            return Err(Error::Protocol("need at least 2 folds".into()));
        }
        if self.runs < 1 {
            return Err(Error::Protocol("need at least 1 run".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunResult {
    pub run: usize,
    pub r_star: usize,
    pub k_star: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub runs: Vec<RunResult>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

impl EvalReport {
    /// CSV with one row per run and a trailing summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,r_star,k_star,val_acc,test_acc\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.run, r.r_star, r.k_star, r.val_acc, r.test_acc
            ));
        }
        out.push_str(&format!(
            "mean,,,{},{}\n",
            mean(self.runs.iter().map(|r| r.val_acc)),
            self.mean_test_acc
        ));
        out.push_str(&format!("std,,,,{}\n", self.std_test_acc));
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Stratified fold assignment: per class, round-robin over shuffled members.
/// Returns fold ids aligned with `rows`.
fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut assignment = vec![usize::MAX; labels.len()];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for &c in &classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    for f in 0..folds {
        if !assignment.contains(&f) {
            return Err(Error::Protocol(format!("fold {f} is empty")));
        }
    }
    Ok(assignment)
}

fn protocol_run<F: Real>(
    dataset: &GraphDataset<F>,
    protocol: &EvalProtocol,
    cfg: &TrainConfig,
    run_id: usize,
) -> Result<RunResult> {
    let run_seed = protocol
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(run_id as u64);
    let (train_rows, test_rows) =
        stratified_split_indices(&dataset.labels, 0.9, run_seed)?;
    debug_assert!(train_rows.iter().all(|i| !test_rows.contains(i)));

    let q = dataset.graphs[0].attr_dim();
    let p = q.min(5);
    let train_labels: Vec<usize> = train_rows.iter().map(|&i| dataset.labels[i]).collect();
    let fold_of = stratified_folds(&train_labels, protocol.folds, run_seed ^ 0x5EED)?;

    let mut best: Option<(f64, usize, usize, DistanceMatrix<F>)> = None;
    for &r in &protocol.r_grid {
        let init = SgcnParams::init(q, p, r, false, run_seed)?;
        let cfg_r = TrainConfig {
            seed: run_seed,
            ..cfg.clone()
        };
        let (params, _) = train(dataset, &train_rows, init, &cfg_r)?;
        let all_rows: Vec<usize> = train_rows.iter().chain(&test_rows).copied().collect();
        let matrix = distance_matrix(
            dataset,
            &all_rows,
            &params,
            cfg.distance,
            &cfg.sliced,
            Rpw2Impl::Sequential,
        )?;
        // matrix rows 0..|train| are the train split, the rest are test

        for &k in &protocol.k_grid {
            let mut correct = 0usize;
            let mut total = 0usize;
            for fold in 0..protocol.folds {
                let fit: Vec<(usize, usize)> = (0..train_rows.len())
                    .filter(|&i| fold_of[i] != fold)
                    .map(|i| (i, train_labels[i]))
                    .collect();
                if k > fit.len() {
                    return Err(Error::Protocol(format!(
                        "fold too small: k = {k} > {} fit rows",
                        fit.len()
                    )));
                }
                for i in (0..train_rows.len()).filter(|&i| fold_of[i] == fold) {
                    let pred = knn_predict(&fit, i, k, &matrix)?;
                    correct += usize::from(pred == train_labels[i]);
                    total += 1;
                }
            }
            let val_acc = correct as f64 / total as f64;
            let better = match &best {
                None => true,
                Some((acc, _, _, _)) => val_acc > *acc,
            };
            if better {
                best = Some((val_acc, r, k, matrix.clone()));
            }
        }
    }
    let (val_acc, r_star, k_star, matrix) = best.expect("non-empty grids");

    let fit: Vec<(usize, usize)> = (0..train_rows.len())
        .map(|i| (i, train_labels[i]))
        .collect();
    let mut correct = 0usize;
    for (t, &row) in test_rows.iter().enumerate() {
        let pred = knn_predict(&fit, train_rows.len() + t, k_star, &matrix)?;
        correct += usize::from(pred == dataset.labels[row]);
    }
    let test_acc = correct as f64 / test_rows.len() as f64;
    Ok(RunResult {
        run: run_id,
        r_star,
        k_star,
        val_acc,
        test_acc,
    })
}

/// The full evaluation protocol. Runs execute in parallel; results are
/// reported in run order.
pub fn run_protocol<F: Real>(
    dataset: &GraphDataset<F>,
    protocol: &EvalProtocol,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    protocol.validate()?;
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Protocol("empty dataset".into()));
    }
    let runs: Vec<RunResult> = (0..protocol.runs)
        .into_par_iter()
        .map(|run_id| protocol_run(dataset, protocol, cfg, run_id))
        .collect::<Result<_>>()?;
    let mean_test = mean(runs.iter().map(|r| r.test_acc));
    let var = runs
        .iter()
        .map(|r| (r.test_acc - mean_test).powi(2))
        .sum::<f64>()
        / runs.len() as f64;
    Ok(EvalReport {
        runs,
        mean_test_acc: mean_test,
        std_test_acc: var.sqrt(),
    })
}

/// Kernel K = exp(-lambda * d), entrywise.
pub fn kernel_matrix<F: Real>(matrix: &DistanceMatrix<F>, lambda: F) -> Result<Array2<F>> {
    if !(lambda > F::zero()) {
        return Err(Error::Protocol("lambda must be > 0".into()));
    }
    Ok(matrix.values.mapv(|d| (-lambda * d).exp()))
}

/// Plain-text square matrix: first line N, then N space-separated rows.
pub fn matrix_to_text<F: Real>(values: &Array2<F>) -> String {
    let n = values.nrows();
    let mut out = format!("{n}\n");
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}
