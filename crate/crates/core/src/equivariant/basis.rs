//! Partition basis of permutation-equivariant linear maps between node
//! tensors of order `k` and `l` (`k, l ≤ 2`).
//!
//! Positions `0..k` index the input tensor and `k..k+l` the output. Each set
//! partition of these `k + l` positions yields one basis map: output entry
//! `y[j]` sums input entries `x[i]` over all index assignments in which
//! positions of the same block carry equal node indices. Blocks that touch
//! only input positions become sums over nodes (divided by the number of
//! existing nodes), blocks that touch only output positions become
//! broadcasts, and mixed blocks carry an index from input to output.
//!
//! The ordering is the lexicographic order of restricted growth strings,
//! so `(2, 2)` starts with the all-in-one block (diagonal to diagonal) and
//! ends with the all-singletons block (total sum broadcast everywhere).

use crate::error::{Error, Result};

/// Number of set partitions of an `m`-element set.
pub fn bell(m: usize) -> usize {
    // Bell triangle
    let mut row = vec![1usize];
    for _ in 0..m {
        let mut next = vec![*row.last().unwrap()];
        for &x in &row {
            let v = next.last().unwrap() + x;
            next.push(v);
        }
        row = next;
    }
    row[0]
}

/// All set partitions of `{0, .., m-1}` as restricted growth strings
/// (`rgs[i]` is the block of element `i`), in lexicographic order.
pub fn set_partitions(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, m: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        let limit = if prefix.is_empty() { 0 } else { max + 1 };
        for b in 0..=limit {
            prefix.push(b);
            rec(prefix, max.max(b), m, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), 0, m, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisElement {
    pub k: usize,
    pub l: usize,
    /// Block id of every position; input positions first.
    pub partition: Vec<usize>,
    /// Blocks touching both input and output, in block order.
    conn: Vec<usize>,
    /// For each connected block, one input position in it.
    conn_in: Vec<usize>,
    /// For each connected block, one output position in it (relative to `k`).
    conn_out: Vec<usize>,
    /// Number of blocks touching only input positions.
    in_only: usize,
    in_diag: bool,
    out_diag: bool,
}

impl BasisElement {
    fn new(k: usize, l: usize, partition: Vec<usize>) -> Self {
        let blocks = partition.iter().max().map_or(0, |m| m + 1);
        let mut conn = Vec::new();
        let mut conn_in = Vec::new();
        let mut conn_out = Vec::new();
        let mut in_only = 0;
        for blk in 0..blocks {
            let ins: Vec<usize> = (0..k).filter(|&p| partition[p] == blk).collect();
            let outs: Vec<usize> = (0..l).filter(|&p| partition[k + p] == blk).collect();
            match (ins.is_empty(), outs.is_empty()) {
                (false, false) => {
                    conn.push(blk);
                    conn_in.push(ins[0]);
                    conn_out.push(outs[0]);
                }
                (false, true) => in_only += 1,
                _ => {}
            }
        }
        let in_diag = k == 2 && partition[0] == partition[1];
        let out_diag = l == 2 && partition[k] == partition[k + 1];
        Self {
            k,
            l,
            partition,
            conn,
            conn_in,
            conn_out,
            in_only,
            in_diag,
            out_diag,
        }
    }

    /// Order of the intermediate tensor carried from input to output.
    pub fn carried_order(&self) -> usize {
        self.conn.len()
    }

    /// Number of node sums performed on the input.
    pub fn summed_indices(&self) -> usize {
        self.in_only
    }

    /// Human-readable description, e.g. `"{0,2}{1}{3}"` with outputs primed.
    pub fn describe(&self) -> String {
        let blocks = self.partition.iter().max().map_or(0, |m| m + 1);
        let mut s = String::new();
        for blk in 0..blocks {
            let names: Vec<String> = self
                .partition
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == blk)
                .map(|(p, _)| if p < self.k { format!("i{p}") } else { format!("o{}", p - self.k) })
                .collect();
            s.push_str(&format!("{{{}}}", names.join(",")));
        }
        s
    }

    fn carried_index(&self, tuple: &[usize], positions: &[usize], n: usize) -> usize {
        positions.iter().fold(0, |acc, &p| acc * n + tuple[p])
    }

    /// Sums input entries of one graph into the carried tensor
    /// `r` (`n^c × d`). `x` is the graph's flat input (`n^k × d`).
    pub(crate) fn reduce(&self, x: &[f64], d: usize, n: usize, nodes: &[usize], r: &mut [f64]) {
        if nodes.is_empty() && self.k > 0 {
            return;
        }
        let scale = (nodes.len().max(1) as f64).powi(-(self.in_only as i32));
        for_each_tuple(self.k, nodes, self.in_diag, |t| {
            let src = flat(t, self.k, n) * d;
            let dst = self.carried_index(t, &self.conn_in, n) * d;
            for c in 0..d {
                r[dst + c] += x[src + c] * scale;
            }
        });
    }

    /// Adjoint of [`reduce`](Self::reduce).
    pub(crate) fn reduce_adjoint(&self, gr: &[f64], d: usize, n: usize, nodes: &[usize], gx: &mut [f64]) {
        if nodes.is_empty() && self.k > 0 {
            return;
        }
        let scale = (nodes.len().max(1) as f64).powi(-(self.in_only as i32));
        for_each_tuple(self.k, nodes, self.in_diag, |t| {
            let dst = flat(t, self.k, n) * d;
            let src = self.carried_index(t, &self.conn_in, n) * d;
            for c in 0..d {
                gx[dst + c] += gr[src + c] * scale;
            }
        });
    }

    /// Writes the carried tensor `m` (`n^c × d`) onto the output entries of
    /// existing nodes: `y` is the graph's flat output (`n^l × d`).
    pub(crate) fn expand(&self, m: &[f64], d: usize, n: usize, nodes: &[usize], y: &mut [f64]) {
        for_each_tuple(self.l, nodes, self.out_diag, |t| {
            let dst = flat(t, self.l, n) * d;
            let src = self.carried_index(t, &self.conn_out, n) * d;
            for c in 0..d {
                y[dst + c] += m[src + c];
            }
        });
    }

    /// Adjoint of [`expand`](Self::expand).
    pub(crate) fn expand_adjoint(&self, gy: &[f64], d: usize, n: usize, nodes: &[usize], gm: &mut [f64]) {
        for_each_tuple(self.l, nodes, self.out_diag, |t| {
            let src = flat(t, self.l, n) * d;
            let dst = self.carried_index(t, &self.conn_out, n) * d;
            for c in 0..d {
                gm[dst + c] += gy[src + c];
            }
        });
    }
}

fn flat(t: &[usize], order: usize, n: usize) -> usize {
    match order {
        0 => 0,
        1 => t[0],
        _ => t[0] * n + t[1],
    }
}

fn for_each_tuple(order: usize, nodes: &[usize], diag: bool, mut f: impl FnMut(&[usize])) {
    match order {
        0 => f(&[]),
        1 => nodes.iter().for_each(|&i| f(&[i])),
        _ => {
            if diag {
                nodes.iter().for_each(|&i| f(&[i, i]));
            } else {
                for &i in nodes {
                    for &j in nodes {
                        f(&[i, j]);
                    }
                }
            }
        }
    }
}

/// The `Bell(k + l)` basis maps from order-`k` to order-`l` tensors.
pub fn enumerate_basis(k: usize, l: usize) -> Result<Vec<BasisElement>> {
    if k > 2 || l > 2 {
        return Err(Error::Unsupported(format!(
            "tensor orders up to 2 are supported, got k = {k}, l = {l}"
        )));
    }
    Ok(set_partitions(k + l)
        .into_iter()
        .map(|p| BasisElement::new(k, l, p))
        .collect())
}
