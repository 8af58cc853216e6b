//! Batched graph tensors on a tape and the stack of equivariant modules
//! shared by the classifier and the VAE encoder.

use ndarray::IxDyn;
use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::equivariant::{EquivariantModule, Features, StreamDims};
use crate::error::{mismatch, Result};
use crate::graph::{DenseGraph, GraphDims};
use crate::nn::{Ctx, NodeMask, ParamStore};

/// Dense `(B, V, A, E)` tensors of a batch, hard or relaxed, together with
/// the hard node mask. Shapes: `b (batch, n, 2)`, `v (batch, n, d_V)`,
/// `a (batch, n, n, 1)`, `e (batch, n, n, d_E)`.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub b: Var,
    pub v: Var,
    pub a: Var,
    pub e: Option<Var>,
    pub mask: NodeMask,
}

/// Plain batched tensors of hard graphs.
#[derive(Clone, Debug)]
pub struct GraphTensors {
    pub b: Tensor,
    pub v: Tensor,
    pub a: Tensor,
    pub e: Option<Tensor>,
}

impl GraphTensors {
    pub fn from_graphs(graphs: &[&DenseGraph]) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return mismatch("empty batch");
        };
        let dims = first.dims();
        if let Some(g) = graphs.iter().find(|g| g.dims() != dims) {
            return mismatch(format!("batch mixes {:?} and {:?}", dims, g.dims()));
        }
        let (bsz, n) = (graphs.len(), dims.n);
        let mut b = Tensor::zeros(IxDyn(&[bsz, n, 2]));
        let mut v = Tensor::zeros(IxDyn(&[bsz, n, dims.d_v]));
        let mut a = Tensor::zeros(IxDyn(&[bsz, n, n, 1]));
        let mut e = dims.d_e.map(|d| Tensor::zeros(IxDyn(&[bsz, n, n, d])));
        for (k, g) in graphs.iter().enumerate() {
            for i in 0..n {
                for c in 0..2 {
                    b[[k, i, c]] = g.b()[[i, c]];
                }
                for c in 0..dims.d_v {
                    v[[k, i, c]] = g.v()[[i, c]];
                }
                for j in 0..n {
                    a[[k, i, j, 0]] = g.a()[[i, j]];
                }
            }
            if let (Some(e), Some(ge)) = (e.as_mut(), g.e()) {
                for ((i, j, c), &x) in ge.indexed_iter() {
                    e[[k, i, j, c]] = x;
                }
            }
        }
        Ok(Self { b, v, a, e })
    }
}

impl GraphInput {
    /// Hard graphs as tape constants.
    pub fn from_graphs(tape: &Tape, graphs: &[&DenseGraph]) -> Result<Self> {
        let t = GraphTensors::from_graphs(graphs)?;
        Ok(Self {
            b: tape.constant(t.b),
            v: tape.constant(t.v),
            a: tape.constant(t.a),
            e: t.e.map(|e| tape.constant(e)),
            mask: NodeMask::from_graphs(graphs),
        })
    }

    pub fn batch(&self) -> usize {
        self.mask.batch()
    }

    /// Checks the tensor shapes against `dims`.
    pub fn check(&self, tape: &Tape, dims: GraphDims) -> Result<()> {
        let bsz = self.batch();
        let n = dims.n;
        if self.mask.n != n {
            return mismatch(format!("mask has {} slots, model expects {n}", self.mask.n));
        }
        let expect = |name: &str, v: Var, shape: Vec<usize>| -> Result<()> {
            let got = tape.shape(v);
            if got != shape {
                return mismatch(format!("{name} has shape {got:?}, expected {shape:?}"));
            }
            Ok(())
        };
        expect("B", self.b, vec![bsz, n, 2])?;
        expect("V", self.v, vec![bsz, n, dims.d_v])?;
        expect("A", self.a, vec![bsz, n, n, 1])?;
        match (self.e, dims.d_e) {
            (Some(e), Some(d)) => expect("E", e, vec![bsz, n, n, d]),
            (None, None) => Ok(()),
            (Some(_), None) => mismatch("edge attributes given to a model without them"),
            (None, Some(_)) => mismatch("edge attributes missing"),
        }
    }

    /// `[A, E]` edge channels.
    pub fn structure(&self, tape: &Tape) -> Var {
        match self.e {
            Some(e) => tape.concat_last(&[self.a, e]),
            None => self.a,
        }
    }
}

/// Four equivariant modules of equal width. The first sees only `B` and
/// `V`; each later one receives the previous features with `A` and `E`
/// concatenated onto the edge channels. The last emits node features only.
#[derive(Clone, Debug)]
pub struct Trunk {
    modules: Vec<EquivariantModule>,
    pub channels: usize,
}

impl Trunk {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: GraphDims, channels: usize, rng: &mut R) -> Self {
        let c = channels;
        let s = 1 + dims.d_e.unwrap_or(0);
        let shapes = [
            (StreamDims::new(2 + dims.d_v, 0), StreamDims::new(c, 0)),
            (StreamDims::new(c, s), StreamDims::new(c, c)),
            (StreamDims::new(c, c + s), StreamDims::new(c, c)),
            (StreamDims::new(c, c + s), StreamDims::new(c, 0)),
        ];
        let modules = shapes
            .iter()
            .enumerate()
            .map(|(k, &(i, o))| EquivariantModule::new(store, &format!("{name}.m{k}"), i, o, rng))
            .collect();
        Self { modules, channels }
    }

    /// Node features `(batch, n, channels)`, zero on padding rows.
    pub fn forward(&self, ctx: &Ctx, input: &GraphInput) -> Result<Var> {
        let tape = &ctx.tape;
        let structure = input.structure(tape);
        let mut h = self.modules[0].forward(
            ctx,
            Features {
                node: Some(tape.concat_last(&[input.b, input.v])),
                edge: None,
            },
            &input.mask,
        )?;
        for (k, m) in self.modules.iter().enumerate().skip(1) {
            let edge = match h.edge {
                Some(e) if k > 1 => tape.concat_last(&[e, structure]),
                _ => structure,
            };
            h = m.forward(
                ctx,
                Features {
                    node: h.node,
                    edge: Some(edge),
                },
                &input.mask,
            )?;
        }
        Ok(h.node.expect("last module emits node features"))
    }
}
