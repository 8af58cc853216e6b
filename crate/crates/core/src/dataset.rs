//! Benchmark ingestion (sparse text format), filtering, padding, stratified
//! splits, JSON snapshots and a small synthetic cycle-detection dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{pad_graph, DenseGraph, GraphDims, GraphRecord};

/// One graph as read from disk: original label codes, undirected edges
/// between local node indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGraph {
    pub node_labels: Vec<i64>,
    pub edges: Vec<(usize, usize)>,
    pub edge_labels: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDataset {
    pub name: String,
    pub graphs: Vec<RawGraph>,
    /// Graph labels in `{0, 1}`; 1 is the minority class of the raw file.
    pub labels: Vec<usize>,
    /// Original graph-label value of class 0 and class 1.
    pub label_values: [i64; 2],
}

impl RawDataset {
    pub fn has_edge_labels(&self) -> bool {
        self.graphs.first().is_some_and(|g| g.edge_labels.is_some())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn parse_ints(path: &Path, line_no: usize, line: &str) -> Result<Vec<i64>> {
    line.split(',')
        .map(|t| {
            t.trim().parse::<i64>().map_err(|e| Error::Dataset {
                path: path.to_path_buf(),
                message: format!("line {}: {e}: {line:?}", line_no + 1),
            })
        })
        .collect()
}

fn read_column(path: &Path) -> Result<Vec<i64>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(k, l)| Ok(parse_ints(path, k, l)?[0]))
        .collect()
}

/// Reads `<dir>/<name>_{A,graph_indicator,graph_labels,node_labels}.txt` and
/// the optional `<name>_edge_labels.txt`. Edges listed in both directions
/// are merged, self-loops dropped.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<RawDataset> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let dataset_err = |path: PathBuf, message: String| Error::Dataset { path, message };

    let indicator_path = file("graph_indicator");
    let indicator = read_column(&indicator_path)?;
    let graph_labels_path = file("graph_labels");
    let raw_labels = read_column(&graph_labels_path)?;
    let node_labels_path = file("node_labels");
    let node_labels = read_column(&node_labels_path)?;
    let a_path = file("A");
    let a_lines = read_lines(&a_path)?;
    let edge_labels_path = file("edge_labels");
    let edge_labels = if edge_labels_path.exists() {
        Some(read_column(&edge_labels_path)?)
    } else {
        None
    };

    let num_graphs = raw_labels.len();
    if node_labels.len() != indicator.len() {
        return Err(dataset_err(
            node_labels_path,
            format!("{} node labels for {} nodes", node_labels.len(), indicator.len()),
        ));
    }
    // node -> (graph, local index)
    let mut local = Vec::with_capacity(indicator.len());
    let mut graphs: Vec<RawGraph> = (0..num_graphs)
        .map(|_| RawGraph {
            node_labels: Vec::new(),
            edges: Vec::new(),
            edge_labels: edge_labels.as_ref().map(|_| Vec::new()),
        })
        .collect();
    let mut prev = 0;
    for (k, &gi) in indicator.iter().enumerate() {
        if gi < 1 || gi as usize > num_graphs || gi < prev {
            return Err(dataset_err(
                indicator_path,
                format!("line {}: graph id {gi} out of range 1..={num_graphs} or not sorted", k + 1),
            ));
        }
        prev = gi;
        let g = &mut graphs[gi as usize - 1];
        local.push((gi as usize - 1, g.node_labels.len()));
        g.node_labels.push(node_labels[k]);
    }
    if let Some(el) = &edge_labels {
        if el.len() != a_lines.len() {
            return Err(dataset_err(
                edge_labels_path.clone(),
                format!("{} edge labels for {} edges", el.len(), a_lines.len()),
            ));
        }
    }
    let mut seen: Vec<BTreeMap<(usize, usize), i64>> = vec![BTreeMap::new(); num_graphs];
    for (k, line) in a_lines.iter().enumerate() {
        let pair = parse_ints(&a_path, k, line)?;
        if pair.len() != 2 {
            return Err(dataset_err(a_path, format!("line {}: expected a node pair", k + 1)));
        }
        let (u, v) = (pair[0], pair[1]);
        let in_range = |x: i64| x >= 1 && (x as usize) <= local.len();
        if !in_range(u) || !in_range(v) {
            return Err(dataset_err(
                a_path,
                format!("line {}: node index outside 1..={}", k + 1, local.len()),
            ));
        }
        let (gu, lu) = local[u as usize - 1];
        let (gv, lv) = local[v as usize - 1];
        if gu != gv {
            return Err(dataset_err(a_path, format!("line {}: edge joins graphs {gu} and {gv}", k + 1)));
        }
        if lu == lv {
            continue;
        }
        let key = (lu.min(lv), lu.max(lv));
        let label = edge_labels.as_ref().map_or(0, |el| el[k]);
        match seen[gu].get(&key) {
            Some(&prev) if prev != label => {
                return Err(dataset_err(
                    a_path,
                    format!("line {}: edge {key:?} of graph {gu} has conflicting labels", k + 1),
                ))
            }
            Some(_) => {}
            None => {
                seen[gu].insert(key, label);
            }
        }
    }
    for (g, edges) in graphs.iter_mut().zip(seen) {
        for ((i, j), label) in edges {
            g.edges.push((i, j));
            if let Some(el) = &mut g.edge_labels {
                el.push(label);
            }
        }
    }

    let values: BTreeSet<i64> = raw_labels.iter().copied().collect();
    if values.len() != 2 {
        return Err(dataset_err(
            graph_labels_path,
            format!("expected exactly two graph classes, found {}", values.len()),
        ));
    }
    let vals: Vec<i64> = values.into_iter().collect();
    let count = |v: i64| raw_labels.iter().filter(|&&x| x == v).count();
    // minority class becomes 1; on a tie the larger value does
    let label_values = if count(vals[0]) < count(vals[1]) {
        [vals[1], vals[0]]
    } else {
        [vals[0], vals[1]]
    };
    let labels = raw_labels
        .iter()
        .map(|&v| usize::from(v == label_values[1]))
        .collect();
    Ok(RawDataset {
        name: name.to_string(),
        graphs,
        labels,
        label_values,
    })
}

/// Graphs surviving the filter with labels remapped to dense class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredDataset {
    pub name: String,
    pub max_nodes: usize,
    pub min_node_label_freq: usize,
    /// Per surviving graph: node classes, edges, edge classes.
    pub graphs: Vec<(Vec<usize>, Vec<(usize, usize)>, Option<Vec<usize>>)>,
    pub labels: Vec<usize>,
    /// Original code of each dense node class.
    pub node_classes: Vec<i64>,
    /// Original code of each dense edge class; `None` without edge labels.
    pub edge_classes: Option<Vec<i64>>,
    /// Index of every surviving graph in the raw dataset.
    pub source_index: Vec<usize>,
}

fn node_label_counts(graphs: &[&RawGraph]) -> BTreeMap<i64, usize> {
    let mut counts = BTreeMap::new();
    for g in graphs {
        for &l in &g.node_labels {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    counts
}

/// Drops graphs with `max_nodes` or more nodes and graphs containing a node
/// label whose corpus frequency is at most `min_node_label_freq`. Frequencies
/// are recounted on the survivors until nothing changes, which makes the
/// filter idempotent. Surviving classes are remapped to `0..d`.
pub fn filter_dataset(raw: &RawDataset, max_nodes: usize, min_node_label_freq: usize) -> Result<FilteredDataset> {
    if max_nodes < 1 {
        return Err(Error::InvalidArgument("max_nodes must be at least 1".into()));
    }
    let mut keep: Vec<usize> = (0..raw.graphs.len())
        .filter(|&k| raw.graphs[k].node_labels.len() < max_nodes)
        .collect();
    loop {
        let kept: Vec<&RawGraph> = keep.iter().map(|&k| &raw.graphs[k]).collect();
        let counts = node_label_counts(&kept);
        let next: Vec<usize> = keep
            .iter()
            .copied()
            .filter(|&k| raw.graphs[k].node_labels.iter().all(|l| counts[l] > min_node_label_freq))
            .collect();
        if next.len() == keep.len() {
            break;
        }
        keep = next;
    }
    if keep.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: no graph has fewer than {max_nodes} nodes with every node label occurring more than {min_node_label_freq} times",
            raw.name
        )));
    }
    let node_classes: Vec<i64> = keep
        .iter()
        .flat_map(|&k| raw.graphs[k].node_labels.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let edge_classes: Option<Vec<i64>> = raw.has_edge_labels().then(|| {
        keep.iter()
            .flat_map(|&k| raw.graphs[k].edge_labels.iter().flatten().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    });
    let index_of = |classes: &[i64], v: i64| classes.binary_search(&v).expect("class present");
    let graphs = keep
        .iter()
        .map(|&k| {
            let g = &raw.graphs[k];
            let nodes = g.node_labels.iter().map(|&l| index_of(&node_classes, l)).collect();
            let edge_labels = match (&g.edge_labels, &edge_classes) {
                (Some(el), Some(classes)) => Some(el.iter().map(|&l| index_of(classes, l)).collect()),
                _ => None,
            };
            (nodes, g.edges.clone(), edge_labels)
        })
        .collect();
    Ok(FilteredDataset {
        name: raw.name.clone(),
        max_nodes,
        min_node_label_freq,
        graphs,
        labels: keep.iter().map(|&k| raw.labels[k]).collect(),
        node_classes,
        edge_classes,
        source_index: keep,
    })
}

impl FilteredDataset {
    /// The filtered data as a raw dataset with dense label codes, so the
    /// filter can be re-applied.
    pub fn to_raw(&self) -> RawDataset {
        RawDataset {
            name: self.name.clone(),
            graphs: self
                .graphs
                .iter()
                .map(|(nodes, edges, el)| RawGraph {
                    node_labels: nodes.iter().map(|&l| l as i64).collect(),
                    edges: edges.clone(),
                    edge_labels: el.as_ref().map(|el| el.iter().map(|&l| l as i64).collect()),
                })
                .collect(),
            labels: self.labels.clone(),
            label_values: [0, 1],
        }
    }
}

/// A labelled collection of graphs padded to a common size.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCollection {
    pub name: String,
    pub dims: GraphDims,
    pub graphs: Vec<DenseGraph>,
    pub labels: Vec<usize>,
}

impl GraphCollection {
    pub fn new(name: impl Into<String>, dims: GraphDims, graphs: Vec<DenseGraph>, labels: Vec<usize>) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::SizeMismatch(format!("{} graphs, {} labels", graphs.len(), labels.len())));
        }
        if let Some(g) = graphs.iter().find(|g| g.dims() != dims) {
            return Err(Error::SizeMismatch(format!("graph dims {:?}, collection {dims:?}", g.dims())));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {l} is not binary")));
        }
        Ok(Self {
            name: name.into(),
            dims,
            graphs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> GraphCollection {
        GraphCollection {
            name: self.name.clone(),
            dims: self.dims,
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.len() - ones, ones]
    }

    pub fn graph_refs(&self) -> Vec<&DenseGraph> {
        self.graphs.iter().collect()
    }
}

/// Pads every filtered graph to `max_nodes` slots.
pub fn make_collection(filtered: &FilteredDataset) -> Result<GraphCollection> {
    if filtered.graphs.is_empty() {
        return Err(Error::EmptyDataset(filtered.name.clone()));
    }
    let dims = GraphDims::new(
        filtered.max_nodes,
        filtered.node_classes.len(),
        filtered.edge_classes.as_ref().map(Vec::len),
    );
    let graphs = filtered
        .graphs
        .iter()
        .map(|(nodes, edges, el)| pad_graph(nodes, dims.d_v, edges, el.as_deref(), dims.d_e, dims.n))
        .collect::<Result<Vec<_>>>()?;
    GraphCollection::new(filtered.name.clone(), dims, graphs, filtered.labels.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Sorted graph indices of each part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Allocates `total` items over classes proportionally to `sizes`, largest
/// remainder first (ties to the lower class), never exceeding a class size.
fn allocate(total: usize, sizes: &[usize], available: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    let mut out: Vec<usize> = Vec::with_capacity(sizes.len());
    let mut rema: Vec<(f64, usize)> = Vec::new();
    for (c, &s) in sizes.iter().enumerate() {
        let exact = total as f64 * s as f64 / sum.max(1) as f64;
        let base = (exact.floor() as usize).min(available[c]);
        out.push(base);
        rema.push((exact - exact.floor(), c));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - out.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &(_, c) in &rema {
            if left > 0 && out[c] < available[c] {
                out[c] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    out
}

/// Stratified split. Test and validation sizes are `round(fraction · N)`
/// (half away from zero); classes share them by largest remainder.
pub fn split(collection: &GraphCollection, spec: &SplitSpec) -> Result<SplitIndices> {
    let (t, v) = (spec.test_fraction, spec.val_fraction);
    if !(t > 0.0 && t < 1.0 && v > 0.0 && v < 1.0 && t + v < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions test={t}, val={v} must lie in (0, 1) and sum to less than 1"
        )));
    }
    if collection.is_empty() {
        return Err(Error::EmptyDataset(collection.name.clone()));
    }
    let n = collection.len();
    let n_test = (t * n as f64).round() as usize;
    let n_val = (v * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, &l) in collection.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let test_alloc = allocate(n_test, &sizes, &sizes);
    let remaining: Vec<usize> = sizes.iter().zip(&test_alloc).map(|(s, a)| s - a).collect();
    let val_alloc = allocate(n_val, &sizes, &remaining);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in by_class.iter().enumerate() {
        let (test, rest) = members.split_at(test_alloc[c]);
        let (val, train) = rest.split_at(val_alloc[c]);
        out.test.extend_from_slice(test);
        out.val.extend_from_slice(val);
        out.train.extend_from_slice(train);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Whether the graph on `m` nodes with these edges contains a cycle.
pub fn has_cycle(m: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru == rv {
            return true;
        }
        parent[ru] = rv;
    }
    false
}

/// Oracle label of the synthetic task: 1 iff the existing nodes carry a cycle.
pub fn synthetic_label(g: &DenseGraph) -> usize {
    let nodes = g.existing_nodes();
    let pos = |i: usize| nodes.iter().position(|&x| x == i).expect("edge endpoint exists");
    let edges: Vec<(usize, usize)> = g.edges().into_iter().map(|(i, j)| (pos(i), pos(j))).collect();
    usize::from(has_cycle(nodes.len(), &edges))
}

const SYNTHETIC_RETRIES: usize = 32;

/// Random connected graphs on `3..=max_nodes` nodes with two node classes
/// and no edge attributes: a uniform random tree, plus one or two extra
/// edges with probability 1/2. Labels come from [`synthetic_label`].
pub fn generate_synthetic(n_graphs: usize, max_nodes: usize, seed: u64) -> Result<GraphCollection> {
    if !(3..=8).contains(&max_nodes) {
        return Err(Error::InvalidArgument(format!("max_nodes must be in 3..=8, got {max_nodes}")));
    }
    if n_graphs == 0 {
        return Err(Error::EmptyDataset("synthetic".into()));
    }
    let dims = GraphDims::new(max_nodes, 2, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SYNTHETIC_RETRIES {
        let mut graphs = Vec::with_capacity(n_graphs);
        let mut labels = Vec::with_capacity(n_graphs);
        for _ in 0..n_graphs {
            let m = rng.random_range(3..=max_nodes);
            let node_labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..2)).collect();
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            let mut edges: Vec<(usize, usize)> = (1..m)
                .map(|k| {
                    let parent = order[rng.random_range(0..k)];
                    let child = order[k];
                    (parent.min(child), parent.max(child))
                })
                .collect();
            if rng.random_bool(0.5) {
                let extra = rng.random_range(1..=2);
                let mut free: Vec<(usize, usize)> = (0..m)
                    .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
                    .filter(|e| !edges.contains(e))
                    .collect();
                free.shuffle(&mut rng);
                edges.extend(free.into_iter().take(extra));
            }
            edges.sort_unstable();
            let g = pad_graph(&node_labels, 2, &edges, None, None, max_nodes)?;
            labels.push(synthetic_label(&g));
            graphs.push(g);
        }
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64 / n_graphs as f64;
        if (0.3..=0.7).contains(&ones) {
            return GraphCollection::new("synthetic", dims, graphs, labels);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not reach a class balance within [0.3, 0.7] after {SYNTHETIC_RETRIES} attempts"
    )))
}

/// Self-describing processed dataset written by `ingest`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub name: String,
    pub dims: GraphDims,
    pub max_nodes: usize,
    pub min_node_label_freq: Option<usize>,
    pub node_classes: Option<Vec<i64>>,
    pub edge_classes: Option<Vec<i64>>,
    pub graphs: Vec<GraphRecord>,
    pub labels: Vec<usize>,
    pub split: SplitIndices,
    pub split_spec: SplitSpec,
    pub seed: u64,
    pub config_hash: String,
}

pub const SNAPSHOT_VERSION: u32 = 1;

impl Snapshot {
    pub fn collection(&self) -> Result<GraphCollection> {
        let graphs = self
            .graphs
            .iter()
            .map(|r| r.to_graph(self.dims))
            .collect::<Result<Vec<_>>>()?;
        GraphCollection::new(self.name.clone(), self.dims, graphs, self.labels.clone())
    }

    /// `(train, val, test)` collections.
    pub fn parts(&self) -> Result<(GraphCollection, GraphCollection, GraphCollection)> {
        let all = self.collection()?;
        Ok((
            all.subset(&self.split.train),
            all.subset(&self.split.val),
            all.subset(&self.split.test),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let snap: Snapshot = serde_json::from_str(&text)?;
        if snap.format_version != SNAPSHOT_VERSION {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                message: format!("snapshot version {} is not supported", snap.format_version),
            });
        }
        Ok(snap)
    }
}

/// Summary statistics of a processed collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub graphs: usize,
    pub max_nodes: usize,
    pub largest_graph: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub node_attribute_classes: usize,
    pub edge_attribute_classes: Option<usize>,
    pub class_counts: [usize; 2],
    pub split_sizes: [usize; 3],
}

pub fn dataset_stats(collection: &GraphCollection, split: &SplitIndices) -> DatasetStats {
    let len = collection.len().max(1) as f64;
    DatasetStats {
        name: collection.name.clone(),
        graphs: collection.len(),
        max_nodes: collection.dims.n,
        largest_graph: collection.graphs.iter().map(DenseGraph::num_nodes).max().unwrap_or(0),
        mean_nodes: collection.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / len,
        mean_edges: collection.graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / len,
        node_attribute_classes: collection.dims.d_v,
        edge_attribute_classes: collection.dims.d_e,
        class_counts: collection.class_counts(),
        split_sizes: [split.train.len(), split.val.len(), split.test.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate;

    fn write_tu(dir: &Path, name: &str, files: &[(&str, &str)]) {
        for (suffix, body) in files {
            fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
        }
    }

    fn toy_files() -> Vec<(&'static str, &'static str)> {
        // graph 1: triangle 1-2-3 (both directions listed); graph 2: path 4-5;
        // graph 3: single node 6 with a self-loop
        vec![
            ("A", "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n6, 6\n"),
            ("graph_indicator", "1\n1\n1\n2\n2\n3\n"),
            ("graph_labels", "-1\n1\n1\n"),
            ("node_labels", "0\n0\n2\n2\n0\n7\n"),
            ("edge_labels", "1\n1\n0\n0\n1\n1\n3\n3\n0\n"),
        ]
    }

    #[test]
    fn loads_merges_directions_and_drops_self_loops() {
        let dir = tempfile::tempdir().unwrap();
        write_tu(dir.path(), "TOY", &toy_files());
        let raw = load_tudataset(dir.path(), "TOY").unwrap();
        assert_eq!(raw.graphs.len(), 3);
        assert_eq!(raw.graphs[0].edges, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(raw.graphs[0].edge_labels, Some(vec![1, 1, 0]));
        assert_eq!(raw.graphs[1].edges, vec![(0, 1)]);
        assert!(raw.graphs[2].edges.is_empty());
        // -1 occurs once, so it is the minority and becomes class 1
        assert_eq!(raw.labels, vec![1, 0, 0]);
        assert_eq!(raw.label_values, [1, -1]);
    }

    #[test]
    fn missing_edge_label_file_means_no_edge_channel() {
        let dir = tempfile::tempdir().unwrap();
        let files: Vec<_> = toy_files().into_iter().filter(|(s, _)| *s != "edge_labels").collect();
        write_tu(dir.path(), "TOY", &files);
        let raw = load_tudataset(dir.path(), "TOY").unwrap();
        assert!(!raw.has_edge_labels());
        let f = filter_dataset(&raw, 10, 0).unwrap();
        let c = make_collection(&f).unwrap();
        assert_eq!(c.dims.d_e, None);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut files = toy_files();
        files[0] = ("A", "1, 2\n2, 9\n");
        files.retain(|(s, _)| *s != "edge_labels");
        write_tu(dir.path(), "TOY", &files);
        let err = load_tudataset(dir.path(), "TOY").unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let files: Vec<_> = toy_files().into_iter().filter(|(s, _)| *s != "graph_labels").collect();
        write_tu(dir.path(), "TOY", &files);
        assert!(load_tudataset(dir.path(), "TOY").is_err());

        let dir = tempfile::tempdir().unwrap();
        let mut files = toy_files();
        files[1] = ("graph_indicator", "1\n1\n4\n2\n2\n3\n");
        write_tu(dir.path(), "TOY", &files);
        assert!(load_tudataset(dir.path(), "TOY").is_err());
    }

    fn toy_raw(rare_label_count: usize) -> RawDataset {
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        for k in 0..40 {
            graphs.push(RawGraph {
                node_labels: vec![1, 2, 1],
                edges: vec![(0, 1), (1, 2)],
                edge_labels: None,
            });
            labels.push(k % 2);
        }
        for _ in 0..rare_label_count {
            graphs.push(RawGraph {
                node_labels: vec![1, 9],
                edges: vec![(0, 1)],
                edge_labels: None,
            });
            labels.push(1);
        }
        RawDataset {
            name: "toy".into(),
            graphs,
            labels,
            label_values: [0, 1],
        }
    }

    #[test]
    fn rare_labels_remove_their_graphs() {
        let raw = toy_raw(3);
        let f = filter_dataset(&raw, 30, 30).unwrap();
        assert_eq!(f.graphs.len(), 40);
        assert_eq!(f.node_classes, vec![1, 2]);
        assert!(f.graphs.iter().all(|(n, _, _)| n.iter().all(|&l| l < 2)));
    }

    #[test]
    fn size_filter_is_strict() {
        let raw = toy_raw(0);
        assert!(filter_dataset(&raw, 3, 0).is_err());
        assert_eq!(filter_dataset(&raw, 4, 0).unwrap().graphs.len(), 40);
    }

    #[test]
    fn filter_reaches_a_fixed_point() {
        // label 7 is frequent only through a graph that also carries the
        // rare label 9; once that graph goes, label 7 becomes rare too
        let mut raw = toy_raw(0);
        raw.graphs.push(RawGraph {
            node_labels: vec![7, 7, 7, 7, 7, 9],
            edges: vec![],
            edge_labels: None,
        });
        raw.labels.push(0);
        raw.graphs.push(RawGraph {
            node_labels: vec![7, 1],
            edges: vec![(0, 1)],
            edge_labels: None,
        });
        raw.labels.push(1);
        let once = filter_dataset(&raw, 30, 5).unwrap();
        assert_eq!(once.graphs.len(), 40);
        let twice = filter_dataset(&once.to_raw(), 30, 5).unwrap();
        assert_eq!(once.graphs, twice.graphs);
        assert_eq!(once.labels, twice.labels);
    }

    #[test]
    fn empty_filter_result_is_rejected() {
        let raw = toy_raw(0);
        assert!(matches!(filter_dataset(&raw, 30, 1000), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn collection_graphs_validate() {
        let dir = tempfile::tempdir().unwrap();
        write_tu(dir.path(), "TOY", &toy_files());
        let raw = load_tudataset(dir.path(), "TOY").unwrap();
        let c = make_collection(&filter_dataset(&raw, 5, 0).unwrap()).unwrap();
        assert_eq!(c.dims, GraphDims::new(5, 3, Some(3)));
        for g in &c.graphs {
            assert!(validate(g).is_valid());
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = generate_synthetic(100, 6, 1).unwrap();
        let spec = SplitSpec {
            seed: 4,
            ..SplitSpec::default()
        };
        let s = split(&c, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, split(&c, &spec).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split(&c, &SplitSpec { test_fraction: 0.6, val_fraction: 0.5, seed: 0 }).is_err());
    }

    #[test]
    fn split_rounds_half_away_from_zero() {
        let dims = GraphDims::new(3, 1, None);
        let g = pad_graph(&[0], 1, &[], None, None, 3).unwrap();
        let labels: Vec<usize> = (0..1635).map(|k| usize::from(k % 3 == 0)).collect();
        let c = GraphCollection::new("aids-sized", dims, vec![g; 1635], labels).unwrap();
        let s = split(&c, &SplitSpec::default()).unwrap();
        assert_eq!(s.test.len(), 164);
        assert_eq!(s.val.len(), 164);
    }

    #[test]
    fn synthetic_rule_and_determinism() {
        let tri = pad_graph(&[0, 1, 0], 2, &[(0, 1), (1, 2), (0, 2)], None, None, 5).unwrap();
        let path = pad_graph(&[0, 1, 0, 1], 2, &[(0, 1), (1, 2), (2, 3)], None, None, 5).unwrap();
        assert_eq!(synthetic_label(&tri), 1);
        assert_eq!(synthetic_label(&path), 0);
        let a = generate_synthetic(500, 8, 7).unwrap();
        let b = generate_synthetic(500, 8, 7).unwrap();
        assert_eq!(a, b);
        let frac = a.class_counts()[1] as f64 / 500.0;
        assert!((0.3..=0.7).contains(&frac));
        for (g, &l) in a.graphs.iter().zip(&a.labels) {
            assert!(validate(g).is_valid());
            assert_eq!(synthetic_label(g), l);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let c = generate_synthetic(20, 5, 3).unwrap();
        let split = split(&c, &SplitSpec::default()).unwrap();
        let snap = Snapshot {
            format_version: SNAPSHOT_VERSION,
            name: c.name.clone(),
            dims: c.dims,
            max_nodes: 5,
            min_node_label_freq: None,
            node_classes: None,
            edge_classes: None,
            graphs: c.graphs.iter().map(GraphRecord::from_graph).collect(),
            labels: c.labels.clone(),
            split,
            split_spec: SplitSpec::default(),
            seed: 3,
            config_hash: String::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        snap.save(&p).unwrap();
        let back = Snapshot::load(&p).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.collection().unwrap(), c);
    }
}
