//! Dense padded graph representation and the node permutation action.
//!
//! A graph on `n` padded node slots is the quadruple `(B, V, A, E)`:
//! `B` is `n × 2` with row `(1, 0)` for an existing node and `(0, 1)` for a
//! padding slot, `V` holds one-hot node classes, `A` is the symmetric
//! adjacency with zero diagonal and `E` holds one-hot edge classes. `E` is
//! absent for datasets without edge attributes.

use std::fmt;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Column of `B` that marks an existing node.
pub const B_EXISTS: usize = 0;
/// Column of `B` that marks a padding slot.
pub const B_ABSENT: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGraph {
    b: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    e: Option<Array3<f64>>,
}

/// Shared dimensions of a collection of graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub struct GraphDims {
    pub n: usize,
    pub d_v: usize,
    /// `None` when the dataset carries no edge attributes.
    pub d_e: Option<usize>,
}

impl GraphDims {
    pub fn new(n: usize, d_v: usize, d_e: Option<usize>) -> Self {
        Self { n, d_v, d_e }
    }
}

impl DenseGraph {
    /// Assembles a graph from raw matrices. Only shapes are checked; use
    /// [`validate`] for the structural invariants.
    pub fn from_parts(
        b: Array2<f64>,
        v: Array2<f64>,
        a: Array2<f64>,
        e: Option<Array3<f64>>,
    ) -> Result<Self> {
        let n = b.nrows();
        if b.ncols() != 2 {
            return mismatch(format!("B must have 2 columns, got {}", b.ncols()));
        }
        if v.nrows() != n {
            return mismatch(format!("V has {} rows, expected {n}", v.nrows()));
        }
        if a.dim() != (n, n) {
            return mismatch(format!("A is {:?}, expected ({n}, {n})", a.dim()));
        }
        if let Some(e) = &e {
            let (r, c, _) = e.dim();
            if (r, c) != (n, n) {
                return mismatch(format!("E is {:?}, expected ({n}, {n}, _)", e.dim()));
            }
        }
        Ok(Self { b, v, a, e })
    }

    /// All-padding graph.
    pub fn empty(dims: GraphDims) -> Self {
        let GraphDims { n, d_v, d_e } = dims;
        let mut b = Array2::zeros((n, 2));
        b.column_mut(B_ABSENT).fill(1.0);
        Self {
            b,
            v: Array2::zeros((n, d_v)),
            a: Array2::zeros((n, n)),
            e: d_e.map(|d| Array3::zeros((n, n, d))),
        }
    }

    pub fn dims(&self) -> GraphDims {
        GraphDims {
            n: self.n(),
            d_v: self.v.ncols(),
            d_e: self.e.as_ref().map(|e| e.dim().2),
        }
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn e(&self) -> Option<&Array3<f64>> {
        self.e.as_ref()
    }

    pub fn exists(&self, i: usize) -> bool {
        self.b[[i, B_EXISTS]] == 1.0
    }

    pub fn existing_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.exists(i)).collect()
    }

    pub fn num_nodes(&self) -> usize {
        (0..self.n()).filter(|&i| self.exists(i)).count()
    }

    pub fn num_edges(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.a[[i, j]] == 1.0)
            .count()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.a[[i, j]] == 1.0
    }

    /// Class index of node `i`, or `None` for padding.
    pub fn node_label(&self, i: usize) -> Option<usize> {
        if !self.exists(i) {
            return None;
        }
        argmax_one(self.v.row(i).iter().copied())
    }

    /// Class index of edge `(i, j)`; `None` without an edge or edge attributes.
    pub fn edge_label(&self, i: usize, j: usize) -> Option<usize> {
        if !self.has_edge(i, j) {
            return None;
        }
        let e = self.e.as_ref()?;
        argmax_one((0..e.dim().2).map(|c| e[[i, j, c]]))
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .collect()
    }

    pub fn node_label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.v.ncols()];
        for i in self.existing_nodes() {
            if let Some(l) = self.node_label(i) {
                h[l] += 1;
            }
        }
        h
    }

    pub fn edge_label_histogram(&self) -> Vec<usize> {
        let Some(e) = &self.e else { return Vec::new() };
        let mut h = vec![0; e.dim().2];
        for (i, j) in self.edges() {
            if let Some(l) = self.edge_label(i, j) {
                h[l] += 1;
            }
        }
        h
    }

    pub(crate) fn set_node(&mut self, i: usize, label: Option<usize>) {
        self.b.row_mut(i).fill(0.0);
        self.v.row_mut(i).fill(0.0);
        match label {
            Some(l) => {
                self.b[[i, B_EXISTS]] = 1.0;
                self.v[[i, l]] = 1.0;
            }
            None => self.b[[i, B_ABSENT]] = 1.0,
        }
    }

    /// Sets or clears the undirected edge `(i, j)`, writing both triangles.
    pub(crate) fn set_edge(&mut self, i: usize, j: usize, label: Option<Option<usize>>) {
        let present = label.is_some();
        self.a[[i, j]] = if present { 1.0 } else { 0.0 };
        self.a[[j, i]] = self.a[[i, j]];
        if let Some(e) = &mut self.e {
            for c in 0..e.dim().2 {
                e[[i, j, c]] = 0.0;
                e[[j, i, c]] = 0.0;
            }
            if let Some(Some(l)) = label {
                e[[i, j, l]] = 1.0;
                e[[j, i, l]] = 1.0;
            }
        }
    }
}

fn argmax_one(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut found = None;
    for (k, x) in values.enumerate() {
        if x == 1.0 {
            found = Some(k);
        }
    }
    found
}

/// Builds a zero-padded graph. `node_labels[i]` is the class of node `i`;
/// `edges` are undirected pairs of node indices, `edge_labels` their classes
/// (required iff `d_e` is set). Node order is preserved in rows `0..m`.
pub fn pad_graph(
    node_labels: &[usize],
    d_v: usize,
    edges: &[(usize, usize)],
    edge_labels: Option<&[usize]>,
    d_e: Option<usize>,
    n: usize,
) -> Result<DenseGraph> {
    let m = node_labels.len();
    if m > n {
        return Err(Error::GraphTooLarge { nodes: m, max: n });
    }
    match (edge_labels, d_e) {
        (Some(l), Some(_)) if l.len() != edges.len() => {
            return mismatch(format!("{} edge labels for {} edges", l.len(), edges.len()))
        }
        (Some(_), None) => return Err(Error::InvalidArgument("edge labels given without d_e".into())),
        (None, Some(_)) => return Err(Error::InvalidArgument("d_e given without edge labels".into())),
        _ => {}
    }
    let mut g = DenseGraph::empty(GraphDims { n, d_v, d_e });
    for (i, &l) in node_labels.iter().enumerate() {
        if l >= d_v {
            return Err(Error::InvalidArgument(format!("node class {l} outside 0..{d_v}")));
        }
        g.set_node(i, Some(l));
    }
    for (k, &(i, j)) in edges.iter().enumerate() {
        if i >= m || j >= m {
            return Err(Error::InvalidArgument(format!("edge ({i}, {j}) references a missing node")));
        }
        if i == j {
            return Err(Error::InvalidArgument(format!("self-loop at node {i}")));
        }
        if g.has_edge(i, j) {
            return Err(Error::DuplicateEdge(i.min(j), i.max(j)));
        }
        let label = match (edge_labels, d_e) {
            (Some(ls), Some(d)) => {
                if ls[k] >= d {
                    return Err(Error::InvalidArgument(format!("edge class {} outside 0..{d}", ls[k])));
                }
                Some(ls[k])
            }
            _ => None,
        };
        g.set_edge(i, j, Some(label));
    }
    Ok(g)
}

/// One violated structural invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    ExistenceRowNotOneHot { row: usize },
    AdjacencyNotBinary { i: usize, j: usize },
    AdjacencyAsymmetric { i: usize, j: usize },
    SelfLoop { i: usize },
    EdgeToMissingNode { i: usize, j: usize },
    NodeAttrNotOneHot { row: usize },
    PaddingAttrNonZero { row: usize },
    EdgeAttrNotOneHot { i: usize, j: usize },
    EdgeAttrWithoutEdge { i: usize, j: usize },
    EdgeAttrAsymmetric { i: usize, j: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn is_one_hot(values: impl Iterator<Item = f64>) -> bool {
    let mut ones = 0;
    for x in values {
        if x == 1.0 {
            ones += 1;
        } else if x != 0.0 {
            return false;
        }
    }
    ones == 1
}

/// Lists every violated invariant; an empty report means the graph is valid.
pub fn validate(g: &DenseGraph) -> ValidationReport {
    let n = g.n();
    let mut out = Vec::new();
    let exists: Vec<bool> = (0..n)
        .map(|i| {
            let row = g.b.row(i);
            if !is_one_hot(row.iter().copied()) {
                out.push(Violation::ExistenceRowNotOneHot { row: i });
            }
            row[B_EXISTS] == 1.0 && row[B_ABSENT] == 0.0
        })
        .collect();
    for i in 0..n {
        let row = g.v.row(i);
        if exists[i] {
            if !is_one_hot(row.iter().copied()) {
                out.push(Violation::NodeAttrNotOneHot { row: i });
            }
        } else if row.iter().any(|&x| x != 0.0) {
            out.push(Violation::PaddingAttrNonZero { row: i });
        }
    }
    for i in 0..n {
        for j in 0..n {
            let aij = g.a[[i, j]];
            if aij != 0.0 && aij != 1.0 {
                out.push(Violation::AdjacencyNotBinary { i, j });
            }
            if i == j {
                if aij != 0.0 {
                    out.push(Violation::SelfLoop { i });
                }
                continue;
            }
            if i < j && aij != g.a[[j, i]] {
                out.push(Violation::AdjacencyAsymmetric { i, j });
            }
            if aij != 0.0 && (!exists[i] || !exists[j]) {
                out.push(Violation::EdgeToMissingNode { i, j });
            }
            if let Some(e) = &g.e {
                let d = e.dim().2;
                let lane = (0..d).map(|c| e[[i, j, c]]);
                if aij == 1.0 {
                    if !is_one_hot(lane) {
                        out.push(Violation::EdgeAttrNotOneHot { i, j });
                    }
                } else if lane.clone().any(|x| x != 0.0) {
                    out.push(Violation::EdgeAttrWithoutEdge { i, j });
                }
                if i < j && (0..d).any(|c| e[[i, j, c]] != e[[j, i, c]]) {
                    out.push(Violation::EdgeAttrAsymmetric { i, j });
                }
            }
        }
    }
    ValidationReport { violations: out }
}

/// Elementwise equality of all four matrices.
pub fn graph_equal(g1: &DenseGraph, g2: &DenseGraph) -> Result<bool> {
    if g1.dims() != g2.dims() {
        return mismatch(format!("{:?} vs {:?}", g1.dims(), g2.dims()));
    }
    Ok(g1 == g2)
}

/// A permutation `σ` of `{0, .., n-1}`. Acting on a graph, node `i` moves to
/// slot `σ(i)`, i.e. `P_σ[σ(i)][i] = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    sigma: Vec<usize>,
}

impl Permutation {
    pub fn new(sigma: Vec<usize>) -> Result<Self> {
        let n = sigma.len();
        let mut seen = vec![false; n];
        for &s in &sigma {
            if s >= n || seen[s] {
                return Err(Error::InvalidArgument(format!("{sigma:?} is not a bijection")));
            }
            seen[s] = true;
        }
        Ok(Self { sigma })
    }

    pub fn identity(n: usize) -> Self {
        Self { sigma: (0..n).collect() }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut sigma: Vec<usize> = (0..n).collect();
        sigma.shuffle(rng);
        Self { sigma }
    }

    /// Exchanges `i` and `j`.
    pub fn swap(n: usize, i: usize, j: usize) -> Self {
        let mut p = Self::identity(n);
        p.sigma.swap(i, j);
        p
    }

    /// Every permutation of `n` elements in lexicographic order.
    pub fn all(n: usize) -> Vec<Permutation> {
        fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Permutation>) {
            let n = used.len();
            if prefix.len() == n {
                out.push(Permutation { sigma: prefix.clone() });
                return;
            }
            for k in 0..n {
                if !used[k] {
                    used[k] = true;
                    prefix.push(k);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[k] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn image(&self, i: usize) -> usize {
        self.sigma[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sigma
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &s) in self.sigma.iter().enumerate() {
            inv[s] = i;
        }
        Self { sigma: inv }
    }

    /// `other ∘ self`: first apply `self`, then `other`.
    pub fn then(&self, other: &Permutation) -> Self {
        Self {
            sigma: self.sigma.iter().map(|&s| other.sigma[s]).collect(),
        }
    }

    pub fn matrix(&self) -> Array2<f64> {
        let n = self.len();
        let mut p = Array2::zeros((n, n));
        for (i, &s) in self.sigma.iter().enumerate() {
            p[[s, i]] = 1.0;
        }
        p
    }

    /// `P_σ X` for a node-indexed matrix.
    pub fn permute_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, &s) in self.sigma.iter().enumerate() {
            out.row_mut(s).assign(&x.row(i));
        }
        out
    }

    /// `P_σ X P_σᵀ` for a pair-indexed matrix.
    pub fn permute_pairs(&self, x: &Array2<f64>) -> Array2<f64> {
        let n = self.len();
        let mut out = Array2::zeros(x.raw_dim());
        for i in 0..n {
            for j in 0..n {
                out[[self.sigma[i], self.sigma[j]]] = x[[i, j]];
            }
        }
        out
    }

    /// `P_σ X P_σᵀ` applied channel-wise to a pair-indexed tensor.
    pub fn permute_pairs3(&self, x: &Array3<f64>) -> Array3<f64> {
        let n = self.len();
        let mut out = Array3::zeros(x.raw_dim());
        for i in 0..n {
            for j in 0..n {
                out.slice_mut(ndarray::s![self.sigma[i], self.sigma[j], ..])
                    .assign(&x.slice(ndarray::s![i, j, ..]));
            }
        }
        out
    }
}

/// `σ · G = (P_σB, P_σV, P_σAP_σᵀ, P_σEP_σᵀ)`.
pub fn apply_permutation(g: &DenseGraph, p: &Permutation) -> Result<DenseGraph> {
    if p.len() != g.n() {
        return mismatch(format!("permutation of {} elements on a graph with n = {}", p.len(), g.n()));
    }
    Ok(DenseGraph {
        b: p.permute_rows(&g.b),
        v: p.permute_rows(&g.v),
        a: p.permute_pairs(&g.a),
        e: g.e.as_ref().map(|e| p.permute_pairs3(e)),
    })
}

/// Compact form used by snapshots and result files: node class per slot
/// (`None` for padding) and the upper-triangle edge list with classes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphRecord {
    pub nodes: Vec<Option<usize>>,
    pub edges: Vec<(usize, usize, Option<usize>)>,
}

impl GraphRecord {
    pub fn from_graph(g: &DenseGraph) -> Self {
        Self {
            nodes: (0..g.n()).map(|i| g.node_label(i)).collect(),
            edges: g
                .edges()
                .into_iter()
                .map(|(i, j)| (i, j, g.edge_label(i, j)))
                .collect(),
        }
    }

    pub fn to_graph(&self, dims: GraphDims) -> Result<DenseGraph> {
        if self.nodes.len() != dims.n {
            return mismatch(format!("record has {} slots, expected {}", self.nodes.len(), dims.n));
        }
        let mut g = DenseGraph::empty(dims);
        for (i, l) in self.nodes.iter().enumerate() {
            if let Some(l) = l {
                if *l >= dims.d_v {
                    return Err(Error::InvalidArgument(format!("node class {l} outside 0..{}", dims.d_v)));
                }
            }
            g.set_node(i, *l);
        }
        for &(i, j, l) in &self.edges {
            if i >= dims.n || j >= dims.n {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) outside {} slots", dims.n)));
            }
            if dims.d_e.is_some() != l.is_some() || l.zip(dims.d_e).is_some_and(|(l, d)| l >= d) {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) has an invalid class")));
            }
            g.set_edge(i, j, Some(l));
        }
        Ok(g)
    }
}
