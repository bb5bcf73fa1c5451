//! TUD-format dataset loading and node-feature construction.
//!
//! The on-disk layout is the standard multi-file one: `<DS>_A.txt` with
//! comma-separated 1-indexed edge pairs, `<DS>_graph_indicator.txt` and
//! `<DS>_graph_labels.txt` with one integer per line, plus at least one of
//! `<DS>_node_labels.txt` / `<DS>_node_attributes.txt`. Indices are 1-based
//! on disk and 0-based in memory. Non-symmetric edge lists are symmetrized
//! silently and duplicate edges collapse to a single 0/1 entry.

use crate::error::Error;
use crate::scalar::Real;
use crate::Result;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// One attributed graph: sparse symmetric adjacency (as sorted neighbor
/// lists, no self-loops) plus a dense n x q attribute matrix.
#[derive(Debug, Clone)]
pub struct Graph<F: Real> {
    neighbors: Vec<Vec<usize>>,
    attributes: Array2<F>,
    pub graph_id: usize,
}

impl<F: Real> Graph<F> {
    pub fn new(neighbors: Vec<Vec<usize>>, attributes: Array2<F>, graph_id: usize) -> Result<Self> {
        let n = neighbors.len();
        if n == 0 {
            return Err(Error::Recipe("graph with zero nodes".into()));
        }
        if attributes.nrows() != n {
            return Err(Error::Recipe(format!(
                "attribute matrix has {} rows for {} nodes",
                attributes.nrows(),
                n
            )));
        }
        if attributes.ncols() == 0 {
            return Err(Error::Recipe("attribute matrix must have q >= 1 columns".into()));
        }
        if attributes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Recipe("non-finite attribute value".into()));
        }
        let mut neighbors = neighbors;
        for (i, adj) in neighbors.iter_mut().enumerate() {
            adj.sort_unstable();
            adj.dedup();
            if adj.iter().any(|&j| j == i || j >= n) {
                return Err(Error::Recipe("self-loop or out-of-range neighbor".into()));
            }
        }
        // symmetry check
        for i in 0..n {
            for &j in &neighbors[i] {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Recipe(format!("adjacency not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            neighbors,
            attributes,
            graph_id,
        })
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn attributes(&self) -> &Array2<F> {
        &self.attributes
    }

    /// Attribute dimension q.
    pub fn attr_dim(&self) -> usize {
        self.attributes.ncols()
    }

    /// Replace the attribute matrix (same node count required).
    pub fn with_attributes(&self, attributes: Array2<F>) -> Result<Self> {
        Self::new(self.neighbors.clone(), attributes, self.graph_id)
    }
}

/// A labeled collection of graphs sharing one attribute dimension.
#[derive(Debug, Clone)]
pub struct GraphDataset<F: Real> {
    pub graphs: Vec<Graph<F>>,
    /// Class ids remapped to contiguous 0-based integers.
    pub labels: Vec<usize>,
    /// Original on-disk label for each class id.
    pub class_labels: Vec<i64>,
    pub name: String,
}

impl<F: Real> GraphDataset<F> {
    pub fn new(graphs: Vec<Graph<F>>, labels: Vec<usize>, class_labels: Vec<i64>, name: String) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Recipe("empty dataset".into()));
        }
        if graphs.len() != labels.len() {
            return Err(Error::Recipe("label count differs from graph count".into()));
        }
        if class_labels.is_empty() {
            return Err(Error::Recipe("empty class set".into()));
        }
        if labels.iter().any(|&l| l >= class_labels.len()) {
            return Err(Error::Recipe("label outside class set".into()));
        }
        let q = graphs[0].attr_dim();
        if graphs.iter().any(|g| g.attr_dim() != q) {
            return Err(Error::Recipe("inconsistent attribute dimension across graphs".into()));
        }
        Ok(Self {
            graphs,
            labels,
            class_labels,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Shared attribute dimension q.
    pub fn attr_dim(&self) -> usize {
        self.graphs[0].attr_dim()
    }
}

/// How to turn the raw files into node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Continuous attributes as-is from `_node_attributes.txt`.
    RawContinuous,
    /// One-hot of the discrete node labels.
    OneHotLabels,
    /// One-hot of node degree over the distinct degrees seen in the dataset.
    Degree,
    /// Continuous attributes concatenated with one-hot node labels.
    ExtendedConcat,
}

impl FeatureMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw-continuous" => Ok(Self::RawContinuous),
            "one-hot-labels" => Ok(Self::OneHotLabels),
            "degree" => Ok(Self::Degree),
            "extended-concat" => Ok(Self::ExtendedConcat),
            other => Err(Error::Recipe(format!("unknown feature mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureRecipe {
    pub mode: FeatureMode,
    /// Degrees above this value are clamped before one-hot encoding.
    pub degree_cap: Option<usize>,
    /// Per-column standardization of continuous attributes. Off by default.
    pub standardize: bool,
}

impl FeatureRecipe {
    pub fn new(mode: FeatureMode) -> Self {
        Self {
            mode,
            degree_cap: None,
            standardize: false,
        }
    }
}

/// One-hot encode an integer column. Row i carries a single 1 at column
/// `labels[i]`.
pub fn one_hot_encode<F: Real>(labels: &[usize], domain_size: usize) -> Result<Array2<F>> {
    if domain_size == 0 {
        return Err(Error::Recipe("one-hot domain must be non-empty".into()));
    }
    let mut out = Array2::zeros((labels.len(), domain_size));
    for (i, &l) in labels.iter().enumerate() {
        if l >= domain_size {
            return Err(Error::OneHotOutOfRange {
                label: l,
                domain_size,
            });
        }
        out[(i, l)] = F::one();
    }
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn parse_int(path: &Path, line_no: usize, s: &str) -> Result<i64> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no + 1,
        message: format!("expected integer, got '{s}'"),
    })
}

/// Locate the dataset prefix: prefer the directory name, otherwise the first
/// `*_A.txt` found.
fn dataset_prefix(dir: &Path) -> Result<String> {
    let dir_name = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    if dir.join(format!("{dir_name}_A.txt")).exists() {
        return Ok(dir_name);
    }
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(|s| s.to_string()))
        .filter(|n| n.ends_with("_A.txt"))
        .collect();
    names.sort();
    names
        .first()
        .map(|n| n[..n.len() - "_A.txt".len()].to_string())
        .ok_or_else(|| Error::MissingFile(dir.join(format!("{dir_name}_A.txt"))))
}

/// Load a TUD-format directory and build node features per recipe.
pub fn tud_load<F: Real>(dir: &Path, recipe: &FeatureRecipe) -> Result<GraphDataset<F>> {
    let ds = dataset_prefix(dir)?;
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{ds}_{suffix}")) };

    let indicator_path = file("graph_indicator.txt");
    let indicator_lines = read_lines(&indicator_path)?;
    let mut node_graph = Vec::with_capacity(indicator_lines.len());
    for (ln, s) in indicator_lines.iter().enumerate() {
        let g = parse_int(&indicator_path, ln, s)?;
        if g < 1 {
            return Err(Error::Parse {
                path: indicator_path.clone(),
                line: ln + 1,
                message: "graph indicator must be >= 1".into(),
            });
        }
        node_graph.push((g - 1) as usize);
    }
    let num_graphs = node_graph.iter().max().map_or(0, |&g| g + 1);
    if num_graphs == 0 {
        return Err(Error::Parse {
            path: indicator_path.clone(),
            line: 1,
            message: "no nodes in graph indicator".into(),
        });
    }

    // global node index -> (graph, local index)
    let mut sizes = vec![0usize; num_graphs];
    let mut local_of = Vec::with_capacity(node_graph.len());
    for &g in &node_graph {
        local_of.push(sizes[g]);
        sizes[g] += 1;
    }

    let labels_path = file("graph_labels.txt");
    let label_lines = read_lines(&labels_path)?;
    if label_lines.len() != num_graphs {
        return Err(Error::Parse {
            path: labels_path.clone(),
            line: label_lines.len(),
            message: format!("{} labels for {} graphs", label_lines.len(), num_graphs),
        });
    }
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for (ln, s) in label_lines.iter().enumerate() {
        raw_labels.push(parse_int(&labels_path, ln, s)?);
    }
    // remap to contiguous ids in order of first appearance
    let mut class_labels: Vec<i64> = Vec::new();
    let mut labels = Vec::with_capacity(num_graphs);
    for &raw in &raw_labels {
        let id = match class_labels.iter().position(|&c| c == raw) {
            Some(id) => id,
            None => {
                class_labels.push(raw);
                class_labels.len() - 1
            }
        };
        labels.push(id);
    }

    let edges_path = file("A.txt");
    let edge_lines = read_lines(&edges_path)?;
    let mut neighbors: Vec<Vec<Vec<usize>>> = sizes.iter().map(|&n| vec![Vec::new(); n]).collect();
    for (ln, s) in edge_lines.iter().enumerate() {
        let mut parts = s.split(',');
        let a = parse_int(&edges_path, ln, parts.next().unwrap_or(""))?;
        let b = parse_int(&edges_path, ln, parts.next().unwrap_or(""))?;
        if a < 1 || b < 1 || a as usize > node_graph.len() || b as usize > node_graph.len() {
            return Err(Error::Parse {
                path: edges_path.clone(),
                line: ln + 1,
                message: format!("node index out of range in edge ({a},{b})"),
            });
        }
        let (a, b) = ((a - 1) as usize, (b - 1) as usize);
        if node_graph[a] != node_graph[b] {
            return Err(Error::Parse {
                path: edges_path.clone(),
                line: ln + 1,
                message: "edge crosses graph boundary".into(),
            });
        }
        if a == b {
            continue; // stored adjacency keeps a zero diagonal
        }
        let g = node_graph[a];
        let (la, lb) = (local_of[a], local_of[b]);
        neighbors[g][la].push(lb);
        neighbors[g][lb].push(la);
    }

    // optional node labels / attributes
    let node_labels_path = file("node_labels.txt");
    let node_labels: Option<Vec<i64>> = if node_labels_path.exists() {
        let lines = read_lines(&node_labels_path)?;
        if lines.len() != node_graph.len() {
            return Err(Error::Parse {
                path: node_labels_path.clone(),
                line: lines.len(),
                message: "node label count differs from node count".into(),
            });
        }
        let mut v = Vec::with_capacity(lines.len());
        for (ln, s) in lines.iter().enumerate() {
            v.push(parse_int(&node_labels_path, ln, s)?);
        }
        Some(v)
    } else {
        None
    };

    let node_attr_path = file("node_attributes.txt");
    let node_attrs: Option<Vec<Vec<f64>>> = if node_attr_path.exists() {
        let lines = read_lines(&node_attr_path)?;
        if lines.len() != node_graph.len() {
            return Err(Error::Parse {
                path: node_attr_path.clone(),
                line: lines.len(),
                message: "attribute row count differs from node count".into(),
            });
        }
        let mut rows = Vec::with_capacity(lines.len());
        for (ln, s) in lines.iter().enumerate() {
            let row: std::result::Result<Vec<f64>, _> =
                s.split(',').map(|t| t.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|_| Error::Parse {
                path: node_attr_path.clone(),
                line: ln + 1,
                message: format!("malformed attribute row '{s}'"),
            })?);
        }
        Some(rows)
    } else {
        None
    };

    if node_labels.is_none() && node_attrs.is_none() {
        return Err(Error::MissingFile(node_labels_path));
    }

    // dataset-wide label domain (sorted distinct values)
    let label_domain: Vec<i64> = node_labels.as_ref().map_or_else(Vec::new, |ls| {
        let set: std::collections::BTreeSet<i64> = ls.iter().copied().collect();
        set.into_iter().collect()
    });

    // dataset-wide degree domain (sorted distinct degrees, after capping)
    let cap = recipe.degree_cap;
    let clamp = |d: usize| cap.map_or(d, |c| d.min(c));
    let degree_domain: Vec<usize> = {
        let mut set = std::collections::BTreeSet::new();
        for adj in &neighbors {
            for nb in adj {
                let mut uniq = nb.clone();
                uniq.sort_unstable();
                uniq.dedup();
                set.insert(clamp(uniq.len()));
            }
        }
        set.into_iter().collect()
    };

    let need_labels = matches!(recipe.mode, FeatureMode::OneHotLabels | FeatureMode::ExtendedConcat);
    let need_attrs = matches!(recipe.mode, FeatureMode::RawContinuous | FeatureMode::ExtendedConcat);
    if need_labels && node_labels.is_none() {
        return Err(Error::Recipe(format!(
            "recipe requires {} which is absent",
            node_labels_path.display()
        )));
    }
    if need_attrs && node_attrs.is_none() {
        return Err(Error::Recipe(format!(
            "recipe requires {} which is absent",
            node_attr_path.display()
        )));
    }

    // per-graph node lists in global order
    let mut graph_nodes: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (global, &g) in node_graph.iter().enumerate() {
        graph_nodes[g].push(global);
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, nodes) in graph_nodes.iter().enumerate() {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Parse {
                path: indicator_path.clone(),
                line: 1,
                message: format!("graph {} has zero nodes", g + 1),
            });
        }
        let adj = neighbors[g].clone();
        let attrs: Array2<F> = match recipe.mode {
            FeatureMode::RawContinuous => {
                continuous_block(nodes, node_attrs.as_ref().unwrap(), &node_attr_path)?
            }
            FeatureMode::OneHotLabels => {
                let ids: Vec<usize> = nodes
                    .iter()
                    .map(|&v| {
                        label_domain
                            .binary_search(&node_labels.as_ref().unwrap()[v])
                            .expect("label in domain")
                    })
                    .collect();
                one_hot_encode(&ids, label_domain.len())?
            }
            FeatureMode::Degree => {
                let ids: Vec<usize> = (0..n)
                    .map(|local| {
                        let mut uniq = adj[local].clone();
                        uniq.sort_unstable();
                        uniq.dedup();
                        degree_domain
                            .binary_search(&clamp(uniq.len()))
                            .expect("degree in domain")
                    })
                    .collect();
                one_hot_encode(&ids, degree_domain.len())?
            }
            FeatureMode::ExtendedConcat => {
                let cont: Array2<F> =
                    continuous_block(nodes, node_attrs.as_ref().unwrap(), &node_attr_path)?;
                let ids: Vec<usize> = nodes
                    .iter()
                    .map(|&v| {
                        label_domain
                            .binary_search(&node_labels.as_ref().unwrap()[v])
                            .expect("label in domain")
                    })
                    .collect();
                let onehot: Array2<F> = one_hot_encode(&ids, label_domain.len())?;
                ndarray::concatenate(ndarray::Axis(1), &[cont.view(), onehot.view()]).map_err(
                    |e| Error::Recipe(format!("attribute concatenation failed: {e}")),
                )?
            }
        };
        graphs.push(Graph::new(adj, attrs, g)?);
    }

    if recipe.standardize && need_attrs {
        standardize_continuous(&mut graphs, node_attrs.as_ref().unwrap()[0].len())?;
    }

    GraphDataset::new(graphs, labels, class_labels, ds)
}

fn continuous_block<F: Real>(
    nodes: &[usize],
    rows: &[Vec<f64>],
    path: &Path,
) -> Result<Array2<F>> {
    let q = rows[0].len();
    let mut out = Array2::zeros((nodes.len(), q));
    for (i, &v) in nodes.iter().enumerate() {
        if rows[v].len() != q {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: v + 1,
                message: "ragged attribute rows".into(),
            });
        }
        for (j, &x) in rows[v].iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: v + 1,
                    message: "non-finite attribute".into(),
                });
            }
            out[(i, j)] = F::of(x);
        }
    }
    Ok(out)
}

/// Standardize the first `q_cont` columns across the whole dataset.
fn standardize_continuous<F: Real>(graphs: &mut [Graph<F>], q_cont: usize) -> Result<()> {
    let total: usize = graphs.iter().map(|g| g.node_count()).sum();
    let mut mean = vec![0.0f64; q_cont];
    for g in graphs.iter() {
        for row in g.attributes().rows() {
            for c in 0..q_cont {
                mean[c] += row[c].as_f64();
            }
        }
    }
    for m in &mut mean {
        *m /= total as f64;
    }
    let mut var = vec![0.0f64; q_cont];
    for g in graphs.iter() {
        for row in g.attributes().rows() {
            for c in 0..q_cont {
                let d = row[c].as_f64() - mean[c];
                var[c] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= total as f64;
    }
    for g in graphs.iter_mut() {
        let mut attrs = g.attributes().clone();
        for mut row in attrs.rows_mut() {
            for c in 0..q_cont {
                if var[c] > 0.0 {
                    row[c] = F::of((row[c].as_f64() - mean[c]) / var[c].sqrt());
                }
            }
        }
        *g = g.with_attributes(attrs)?;
    }
    Ok(())
}

/// Deterministic per-class split. Train sizes hit `round(fraction * N)`
/// globally by largest-remainder allocation; remainder ties are broken by a
/// seeded draw so different seeds can move the boundary between classes.
pub fn stratified_split<F: Real>(
    dataset: &GraphDataset<F>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train fraction must be in (0,1), got {train_fraction}"
        )));
    }
    stratified_split_indices(&dataset.labels, train_fraction, seed)
}

/// Split arbitrary labeled indices (used for CV folds too).
pub fn stratified_split_indices(
    labels: &[usize],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for (c, members) in &by_class {
        if members.len() < 2 {
            return Err(Error::Split(format!("class {c} has a single member")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = labels.len();
    let target_train = (train_fraction * total as f64).round() as usize;

    // floor allocation plus largest remainders
    let mut alloc: Vec<(usize, usize, f64)> = Vec::new(); // (class, floor, remainder)
    let mut floor_sum = 0usize;
    for (&c, members) in &by_class {
        let exact = train_fraction * members.len() as f64;
        let fl = exact.floor() as usize;
        alloc.push((c, fl, exact - fl as f64));
        floor_sum += fl;
    }
    let mut extra = target_train.saturating_sub(floor_sum);
    // order by remainder descending, seeded jitter on ties
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    let jitter: Vec<f64> = order.iter().map(|_| rng.gen::<f64>()).collect();
    order.sort_by(|&a, &b| {
        alloc[b]
            .2
            .partial_cmp(&alloc[a].2)
            .unwrap()
            .then(jitter[b].partial_cmp(&jitter[a]).unwrap())
    });
    let mut train_count: BTreeMap<usize, usize> = alloc.iter().map(|&(c, fl, _)| (c, fl)).collect();
    for &slot in &order {
        if extra == 0 {
            break;
        }
        let (c, _, _) = alloc[slot];
        if train_count[&c] < by_class[&c].len() {
            *train_count.get_mut(&c).unwrap() += 1;
            extra -= 1;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&c, members) in &by_class {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let k = train_count[&c];
        train.extend_from_slice(&shuffled[..k]);
        test.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
