//! Permutation-equivariant linear layers, equivariant modules and
//! invariant pooling on batches of dense node/edge tensors.
//!
//! Node tensors are `(batch, n, channels)`, edge tensors
//! `(batch, n, n, channels)` and graph-level tensors `(batch, channels)`.

pub mod basis;

use std::rc::Rc;

use ndarray::{s, Array2, ArrayView2, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use basis::{bell, enumerate_basis, BasisElement};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{mismatch, Error, Result};
use crate::nn::{normal_init, Ctx, NodeMask, NormUpdate, ParamId, ParamStore};

fn order_of(shape: &[usize]) -> usize {
    shape.len() - 2
}

impl Tape {
    /// Equivariant linear map `Σ_p basis_p(x) · weights[p]` from an order-`k`
    /// to an order-`l` tensor. Node sums run over `in_mask` nodes and are
    /// divided by their count; output entries are written only for
    /// `out_mask` nodes.
    pub fn equivariant_linear(
        &self,
        x: Var,
        weights: Var,
        basis: &Rc<Vec<BasisElement>>,
        in_mask: &NodeMask,
        out_mask: &NodeMask,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(weights);
        let (k, l) = (basis[0].k, basis[0].l);
        let n = in_mask.n;
        let bsz = xv.shape()[0];
        let d = *xv.shape().last().unwrap();
        let dp = wv.shape()[2];
        assert_eq!(order_of(xv.shape()), k, "input order");
        assert_eq!(wv.shape()[0], basis.len(), "weight count");
        assert_eq!(wv.shape()[1], d, "input channels");
        let in_size = n.pow(k as u32);
        let out_size = n.pow(l as u32);

        let xstd = xv.as_standard_layout();
        let xs = xstd.as_slice().expect("standard layout");
        let mut out_shape = vec![bsz];
        out_shape.extend(std::iter::repeat_n(n, l));
        out_shape.push(dp);
        let mut y = Tensor::zeros(IxDyn(&out_shape));
        let mut carried: Vec<Array2<f64>> = Vec::with_capacity(basis.len());
        {
            let ys = y.as_slice_mut().unwrap();
            for (p, e) in basis.iter().enumerate() {
                let csize = n.pow(e.carried_order() as u32);
                let mut r = Array2::<f64>::zeros((bsz * csize, d));
                {
                    let rs = r.as_slice_mut().unwrap();
                    for b in 0..bsz {
                        e.reduce(
                            &xs[b * in_size * d..(b + 1) * in_size * d],
                            d,
                            n,
                            &in_mask.existing[b],
                            &mut rs[b * csize * d..(b + 1) * csize * d],
                        );
                    }
                }
                let wp: ArrayView2<f64> = wv.slice(s![p, .., ..]).into_dimensionality().unwrap();
                let m = r.dot(&wp);
                let ms = m.as_slice().unwrap();
                for b in 0..bsz {
                    e.expand(
                        &ms[b * csize * dp..(b + 1) * csize * dp],
                        dp,
                        n,
                        &out_mask.existing[b],
                        &mut ys[b * out_size * dp..(b + 1) * out_size * dp],
                    );
                }
                carried.push(r);
            }
        }

        let basis = Rc::clone(basis);
        let in_nodes = Rc::clone(&in_mask.existing);
        let out_nodes = Rc::clone(&out_mask.existing);
        let x_shape = xv.raw_dim();
        self.push(
            y,
            &[x, weights],
            Box::new(move |g, need| {
                let gs = g.as_slice().unwrap();
                let mut gx = need[0].then(|| Tensor::zeros(x_shape.clone()));
                let mut gw = need[1].then(|| Tensor::zeros(wv.raw_dim()));
                for (p, e) in basis.iter().enumerate() {
                    let csize = n.pow(e.carried_order() as u32);
                    let mut gm = Array2::<f64>::zeros((bsz * csize, dp));
                    {
                        let gms = gm.as_slice_mut().unwrap();
                        for b in 0..bsz {
                            e.expand_adjoint(
                                &gs[b * out_size * dp..(b + 1) * out_size * dp],
                                dp,
                                n,
                                &out_nodes[b],
                                &mut gms[b * csize * dp..(b + 1) * csize * dp],
                            );
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        let contrib = carried[p].t().dot(&gm);
                        let mut slot = gw.slice_mut(s![p, .., ..]);
                        slot += &contrib;
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wp: ArrayView2<f64> = wv.slice(s![p, .., ..]).into_dimensionality().unwrap();
                        let gr = gm.dot(&wp.t());
                        let grs = gr.as_slice().unwrap();
                        let gxs = gx.as_slice_mut().unwrap();
                        for b in 0..bsz {
                            e.reduce_adjoint(
                                &grs[b * csize * d..(b + 1) * csize * d],
                                d,
                                n,
                                &in_nodes[b],
                                &mut gxs[b * in_size * d..(b + 1) * in_size * d],
                            );
                        }
                    }
                }
                vec![gx, gw]
            }),
        )
    }
}

/// Channel widths of the node (order 1) and edge (order 2) streams; zero
/// means the stream is absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDims {
    pub node: usize,
    pub edge: usize,
}

impl StreamDims {
    pub fn new(node: usize, edge: usize) -> Self {
        Self { node, edge }
    }

    fn width(&self, order: usize) -> usize {
        if order == 1 {
            self.node
        } else {
            self.edge
        }
    }
}

/// Node and edge feature tensors flowing between modules.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub node: Option<Var>,
    pub edge: Option<Var>,
}

/// Sum of equivariant maps between every present input stream and every
/// present output stream, plus the equivariant bias of each output.
#[derive(Clone, Debug)]
pub struct EquivariantLinear {
    pub input: StreamDims,
    pub output: StreamDims,
    /// `(k, l, weights)` with weights shaped `(Bell(k+l), d, d')`.
    maps: Vec<(usize, usize, ParamId)>,
    /// `(l, bias)` with bias shaped `(Bell(l), 1, d')`.
    biases: Vec<(usize, ParamId)>,
}

impl EquivariantLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: StreamDims,
        output: StreamDims,
        rng: &mut R,
    ) -> Self {
        let mut maps = Vec::new();
        let mut biases = Vec::new();
        for l in [1, 2] {
            let dp = output.width(l);
            if dp == 0 {
                continue;
            }
            let fan_in: usize = [1, 2]
                .iter()
                .map(|&k| input.width(k) * bell(k + l))
                .sum();
            let std = (2.0 / fan_in.max(1) as f64).sqrt();
            for k in [1, 2] {
                let d = input.width(k);
                if d == 0 {
                    continue;
                }
                let w = normal_init(&[bell(k + l), d, dp], std, rng);
                maps.push((k, l, store.add(format!("{name}.w{k}{l}"), w, true)));
            }
            let b = Tensor::zeros(IxDyn(&[bell(l), 1, dp]));
            biases.push((l, store.add(format!("{name}.b{l}"), b, true)));
        }
        Self {
            input,
            output,
            maps,
            biases,
        }
    }

    pub fn num_weights(&self, store: &ParamStore) -> usize {
        self.maps.iter().map(|(_, _, id)| store.get(*id).len()).sum()
    }

    pub fn forward(&self, ctx: &Ctx, x: Features, in_mask: &NodeMask, out_mask: &NodeMask) -> Result<Features> {
        let tape = &ctx.tape;
        let bsz = in_mask.batch();
        let mut acc: [Option<Var>; 3] = [None, None, None];
        for &(k, l, id) in &self.maps {
            let input = if k == 1 { x.node } else { x.edge };
            let Some(input) = input else {
                return Err(Error::SizeMismatch(format!("missing order-{k} input stream")));
            };
            check_input(tape, input, k, in_mask, self.input.width(k))?;
            let basis = Rc::new(enumerate_basis(k, l)?);
            let y = tape.equivariant_linear(input, ctx.param(id), &basis, in_mask, out_mask);
            acc[l] = Some(match acc[l] {
                Some(prev) => tape.add(prev, y),
                None => y,
            });
        }
        let ones = tape.constant(Tensor::ones(IxDyn(&[bsz, 1])));
        for &(l, id) in &self.biases {
            let basis = Rc::new(enumerate_basis(0, l)?);
            let y = tape.equivariant_linear(ones, ctx.param(id), &basis, in_mask, out_mask);
            acc[l] = Some(match acc[l] {
                Some(prev) => tape.add(prev, y),
                None => y,
            });
        }
        Ok(Features {
            node: acc[1],
            edge: acc[2],
        })
    }
}

fn check_input(tape: &Tape, x: Var, order: usize, mask: &NodeMask, width: usize) -> Result<()> {
    let shape = tape.shape(x);
    let mut expected = vec![mask.batch()];
    expected.extend(std::iter::repeat_n(mask.n, order));
    expected.push(width);
    if shape != expected {
        return mismatch(format!("order-{order} input has shape {shape:?}, expected {expected:?}"));
    }
    Ok(())
}

/// Masked batch normalization over one stream.
#[derive(Clone, Debug)]
pub struct MaskedNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl MaskedNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(IxDyn(&[channels])), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(IxDyn(&[channels])), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(IxDyn(&[channels])), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(IxDyn(&[channels])), false),
        }
    }

    /// `weights` selects the positions that contribute statistics.
    pub fn forward(&self, ctx: &Ctx, x: Var, weights: &Tensor) -> Var {
        let tape = &ctx.tape;
        let normalized = if ctx.is_train() {
            let (h, mean, var) = tape.masked_standardize(x, weights, NORM_EPS);
            ctx.record_norm(NormUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                mean,
                var,
                count: weights.sum(),
            });
            h
        } else {
            let store = ctx.store();
            let mean = store.get(self.running_mean);
            let inv = store.get(self.running_var).mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
            let centered = tape.add_const(x, &mean.mapv(|m| -m));
            tape.mul_const(centered, &inv)
        };
        let scaled = tape.scale_last(normalized, ctx.param(self.gamma));
        tape.add_last(scaled, ctx.param(self.beta))
    }
}

/// Equivariant linear layer, then per-node and per-edge channel mixing
/// (kernel-size-one convolution), masked batch normalization and ReLU.
/// Padding positions are zero on output.
#[derive(Clone, Debug)]
pub struct EquivariantModule {
    pub linear: EquivariantLinear,
    node_mix: Option<(ParamId, MaskedNorm)>,
    edge_mix: Option<(ParamId, MaskedNorm)>,
}

impl EquivariantModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: StreamDims,
        output: StreamDims,
        rng: &mut R,
    ) -> Self {
        let linear = EquivariantLinear::new(store, &format!("{name}.lin"), input, output, rng);
        let mut mix = |tag: &str, c: usize| -> Option<(ParamId, MaskedNorm)> {
            (c > 0).then(|| {
                let w = normal_init(&[c, c], (1.0 / c as f64).sqrt(), rng);
                (
                    store.add(format!("{name}.{tag}_mix"), w, true),
                    MaskedNorm::new(store, &format!("{name}.{tag}_norm"), c),
                )
            })
        };
        let node_mix = mix("node", output.node);
        let edge_mix = mix("edge", output.edge);
        Self {
            linear,
            node_mix,
            edge_mix,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Features, mask: &NodeMask) -> Result<Features> {
        let h = self.linear.forward(ctx, x, mask, mask)?;
        let tape = &ctx.tape;
        let stage = |h: Option<Var>, mix: &Option<(ParamId, MaskedNorm)>, weights: &Tensor, col: Tensor| {
            match (h, mix) {
                (Some(h), Some((w, norm))) => {
                    let mixed = tape.matmul_last(h, ctx.param(*w));
                    let normed = norm.forward(ctx, mixed, weights);
                    let act = tape.relu(normed);
                    Some(tape.mul_const(act, &col))
                }
                _ => None,
            }
        };
        Ok(Features {
            node: stage(h.node, &self.node_mix, &mask.node_weights, mask.node_weights_col()),
            edge: stage(h.edge, &self.edge_mix, &mask.pair_weights, mask.pair_weights_col()),
        })
    }
}

/// Channel-wise maximum over existing nodes; rejects graphs without nodes.
pub fn invariant_pool(ctx: &Ctx, node_feats: Var, mask: &NodeMask) -> Result<Var> {
    if let Some(b) = mask.existing.iter().position(|nodes| nodes.is_empty()) {
        return Err(Error::InvalidArgument(format!("graph {b} of the batch has no existing nodes")));
    }
    Ok(ctx.tape.max_pool_nodes(node_feats, Rc::clone(&mask.existing)))
}

/// Applies `σ` to the node axes of a batched tensor of the given order.
pub fn permute_batched(t: &Tensor, order: usize, p: &crate::graph::Permutation) -> Tensor {
    let mut out = Tensor::zeros(t.raw_dim());
    let n = p.len();
    match order {
        1 => {
            for i in 0..n {
                out.slice_mut(s![.., p.image(i), ..]).assign(&t.slice(s![.., i, ..]));
            }
        }
        2 => {
            for i in 0..n {
                for j in 0..n {
                    out.slice_mut(s![.., p.image(i), p.image(j), ..])
                        .assign(&t.slice(s![.., i, j, ..]));
                }
            }
        }
        _ => out.assign(t),
    }
    out
}

/// Splits a batched tensor into per-graph arrays along the batch axis.
pub fn unbatch(t: &Tensor) -> Vec<Tensor> {
    t.axis_iter(Axis(0)).map(|v| v.to_owned()).collect()
}
