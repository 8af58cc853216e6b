//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar output walks the record in reverse and
//! accumulates gradients for every node that requires one. Ops are coarse
//! (a whole equivariant linear map is one node) so the bookkeeping overhead
//! stays negligible next to the arithmetic.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn, Zip};

pub type Tensor = ArrayD<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward closure: receives the output gradient and a flag per parent
/// telling whether that parent needs a gradient. Returns one entry per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub fn scalar(x: f64) -> Tensor {
    Tensor::from_elem(IxDyn(&[]), x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), true, None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), false, None)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar_value on non-scalar tensor");
        *val.iter().next().unwrap()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_node(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var(nodes.len() - 1)
    }

    /// Records an op. The closure is dropped when no parent requires a gradient.
    pub(crate) fn push(&self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires = parents.iter().any(|p| self.requires_grad(*p));
        self.push_node(
            value,
            parents.iter().map(|p| p.0).collect(),
            requires,
            Some(backward),
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        assert_eq!(nodes[out.0].value.len(), 1, "backward needs a scalar output");
        grads[out.0] = Some(Tensor::ones(nodes[out.0].value.raw_dim()));
        for id in (0..=out.0).rev() {
            let node = &nodes[id];
            let Some(f) = node.backward.as_ref() else {
                continue;
            };
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            if !g.is_standard_layout() {
                g = g.as_standard_layout().into_owned();
            }
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = f(&g, &needs);
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                if !need {
                    continue;
                }
                if let Some(pg) = pg {
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    // ---------------------------------------------------------------------
    // Elementwise arithmetic
    // ---------------------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) + &*self.value(b);
        self.push(
            value,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) - &*self.value(b);
        self.push(
            value,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(-g)]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mul expects equal shapes");
        let value = &*av * &*bv;
        self.push(
            value,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g * &*bv),
                    need[1].then(|| g * &*av),
                ]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let value = &*self.value(a) * s;
        self.push(value, &[a], Box::new(move |g, _| vec![Some(g * s)]))
    }

    /// `a + c` with a constant `c` broadcastable to `a`.
    pub fn add_const(&self, a: Var, c: &Tensor) -> Var {
        let value = &*self.value(a) + c;
        self.push(value, &[a], Box::new(|g, _| vec![Some(g.clone())]))
    }

    /// `a * c` with a constant `c` broadcastable to `a`.
    pub fn mul_const(&self, a: Var, c: &Tensor) -> Var {
        let av = self.value(a);
        let value = &*av * c;
        let c = c
            .broadcast(av.raw_dim())
            .expect("mul_const: constant not broadcastable")
            .to_owned();
        self.push(value, &[a], Box::new(move |g, _| vec![Some(g * &c)]))
    }

    /// `x * s` where `s` has the shape of `x` with a trailing axis of length 1.
    pub fn mul_last(&self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!(sv.shape()[sv.ndim() - 1], 1);
        let value = &*xv * &*sv;
        self.push(
            value,
            &[x, s],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g * &*sv);
                let gs = need[1].then(|| {
                    let prod = g * &*xv;
                    prod.sum_axis(Axis(prod.ndim() - 1)).insert_axis(Axis(prod.ndim() - 1))
                });
                vec![gx, gs]
            }),
        )
    }

    /// `x * gamma` with `gamma` a vector over the last axis.
    pub fn scale_last(&self, x: Var, gamma: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let value = &*xv * &*gv;
        self.push(
            value,
            &[x, gamma],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g * &*gv);
                let gg = need[1].then(|| sum_to_last(&(g * &*xv)));
                vec![gx, gg]
            }),
        )
    }

    /// `x + b` with `b` a vector over the last axis.
    pub fn add_last(&self, x: Var, b: Var) -> Var {
        let value = &*self.value(x) + &*self.value(b);
        self.push(
            value,
            &[x, b],
            Box::new(|g, need| vec![need[0].then(|| g.clone()), need[1].then(|| sum_to_last(g))]),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let av = self.value(a);
        let value = av.mapv(|x| x.max(0.0));
        self.push(
            value,
            &[a],
            Box::new(move |g, _| {
                let mut out = g.clone();
                Zip::from(&mut out).and(&*av).for_each(|o, &x| {
                    if x <= 0.0 {
                        *o = 0.0
                    }
                });
                vec![Some(out)]
            }),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let saved = value.clone();
        self.push(value, &[a], Box::new(move |g, _| vec![Some(g * &saved)]))
    }

    pub fn square(&self, a: Var) -> Var {
        let av = self.value(a);
        let value = av.mapv(|x| x * x);
        self.push(value, &[a], Box::new(move |g, _| vec![Some(g * &*av * 2.0)]))
    }

    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.raw_dim();
        let value = scalar(av.sum());
        self.push(
            value,
            &[a],
            Box::new(move |g, _| vec![Some(Tensor::from_elem(shape.clone(), g[IxDyn(&[])]))]),
        )
    }

    /// Euclidean norm of the whole tensor. The gradient at zero is taken as zero.
    pub fn l2_norm(&self, a: Var) -> Var {
        let av = self.value(a);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(
            scalar(norm),
            &[a],
            Box::new(move |g, _| {
                let gs = g[IxDyn(&[])];
                if norm == 0.0 {
                    return vec![Some(Tensor::zeros(av.raw_dim()))];
                }
                vec![Some(&*av * (gs / norm))]
            }),
        )
    }

    /// Euclidean norm of each batch element: `(batch, ...) -> (batch,)`.
    /// The gradient at zero is taken as zero.
    pub fn norms_per_sample(&self, a: Var) -> Var {
        let av = self.value(a);
        let norms: Vec<f64> = av
            .outer_iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::from_shape_vec(IxDyn(&[norms.len()]), norms.clone()).unwrap();
        self.push(
            value,
            &[a],
            Box::new(move |g, _| {
                let mut out = (*av).clone();
                for (k, mut row) in out.outer_iter_mut().enumerate() {
                    let scale = if norms[k] == 0.0 { 0.0 } else { g[k] / norms[k] };
                    row.mapv_inplace(|v| v * scale);
                }
                vec![Some(out)]
            }),
        )
    }

    // ---------------------------------------------------------------------
    // Shape manipulation
    // ---------------------------------------------------------------------

    /// Concatenation along the last axis.
    pub fn concat_last(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value(*p)).collect();
        let axis = Axis(values[0].ndim() - 1);
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(axis, &views)
            .expect("concat_last: shape mismatch")
            .as_standard_layout()
            .into_owned();
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis.0]).collect();
        self.push(
            value,
            parts,
            Box::new(move |g, need| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(need)
                    .map(|(&w, &n)| {
                        let s = start;
                        start += w;
                        n.then(|| g.slice_axis(axis, (s..s + w).into()).to_owned())
                    })
                    .collect()
            }),
        )
    }

    /// Channels `start..end` of the last axis.
    pub fn slice_last(&self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let axis = Axis(xv.ndim() - 1);
        let value = xv.slice_axis(axis, (start..end).into()).to_owned();
        let full = xv.raw_dim();
        self.push(
            value,
            &[x],
            Box::new(move |g, _| {
                let mut out = Tensor::zeros(full.clone());
                out.slice_axis_mut(axis, (start..end).into()).assign(g);
                vec![Some(out)]
            }),
        )
    }

    /// Swaps the two node axes of an edge tensor `(batch, n, n, c)`.
    pub fn transpose_nodes(&self, x: Var) -> Var {
        let value = self.value(x).view().permuted_axes(IxDyn(&[0, 2, 1, 3])).as_standard_layout().to_owned();
        self.push(
            value,
            &[x],
            Box::new(|g, _| {
                vec![Some(
                    g.view().permuted_axes(IxDyn(&[0, 2, 1, 3])).as_standard_layout().to_owned(),
                )]
            }),
        )
    }

    /// `(x + xᵀ) / 2` over the node axes of an edge tensor.
    pub fn symmetrize(&self, x: Var) -> Var {
        let t = self.transpose_nodes(x);
        let s = self.add(x, t);
        self.scale(s, 0.5)
    }

    // ---------------------------------------------------------------------
    // Dense layers and reductions
    // ---------------------------------------------------------------------

    /// `x · w` over the last axis: `(..., d) × (d, d') -> (..., d')`.
    pub fn matmul_last(&self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let d = wv.shape()[0];
        let dp = wv.shape()[1];
        let lead: Vec<usize> = xv.shape()[..xv.ndim() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let x2 = xv.view().into_shape_with_order((rows, d)).expect("matmul_last: bad input");
        let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut out_shape = lead.clone();
        out_shape.push(dp);
        let value = x2.dot(&w2).into_shape_with_order(IxDyn(&out_shape)).unwrap();
        self.push(
            value,
            &[x, w],
            Box::new(move |g, need| {
                let g2 = g.view().into_shape_with_order((rows, dp)).unwrap();
                let x2 = xv.view().into_shape_with_order((rows, d)).unwrap();
                let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let gx = need[0].then(|| {
                    let mut s = lead.clone();
                    s.push(d);
                    g2.dot(&w2.t()).into_shape_with_order(IxDyn(&s)).unwrap()
                });
                let gw = need[1].then(|| x2.t().dot(&g2).into_dyn());
                vec![gx, gw]
            }),
        )
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax_last(&self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = (*xv).clone();
        let last = value.ndim() - 1;
        for mut lane in value.lanes_mut(Axis(last)) {
            let m = lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + lane.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lane.mapv_inplace(|v| v - lse);
        }
        let soft = value.mapv(f64::exp);
        self.push(
            value,
            &[x],
            Box::new(move |g, _| {
                // d/dx = g - softmax * sum(g)
                let gsum = g.sum_axis(Axis(last)).insert_axis(Axis(last));
                vec![Some(g - &(&soft * &gsum))]
            }),
        )
    }

    pub fn softmax_last(&self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = (*xv).clone();
        let last = value.ndim() - 1;
        for mut lane in value.lanes_mut(Axis(last)) {
            let m = lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            lane.mapv_inplace(|v| (v - m).exp());
            let s = lane.sum();
            lane.mapv_inplace(|v| v / s);
        }
        let soft = value.clone();
        self.push(
            value,
            &[x],
            Box::new(move |g, _| {
                let dot = (g * &soft).sum_axis(Axis(last)).insert_axis(Axis(last));
                vec![Some(&soft * &(g - &dot))]
            }),
        )
    }

    /// Channel-wise maximum over the existing nodes of `(batch, n, c)`.
    /// Graphs without existing nodes pool to zeros.
    pub fn max_pool_nodes(&self, x: Var, existing: Rc<Vec<Vec<usize>>>) -> Var {
        let xv = self.value(x);
        let (bsz, _n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut value = Tensor::zeros(IxDyn(&[bsz, c]));
        let mut argmax = vec![usize::MAX; bsz * c];
        for (b, nodes) in existing.iter().enumerate() {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for &i in nodes {
                    let v = xv[[b, i, ch]];
                    if v > best {
                        best = v;
                        argmax[b * c + ch] = i;
                    }
                }
                if !nodes.is_empty() {
                    value[[b, ch]] = best;
                }
            }
        }
        let shape = xv.raw_dim();
        self.push(
            value,
            &[x],
            Box::new(move |g, _| {
                let mut out = Tensor::zeros(shape.clone());
                for b in 0..bsz {
                    for ch in 0..c {
                        let i = argmax[b * c + ch];
                        if i != usize::MAX {
                            out[[b, i, ch]] += g[[b, ch]];
                        }
                    }
                }
                vec![Some(out)]
            }),
        )
    }

    /// Per-channel normalization over the entries selected by `weights`
    /// (0/1 per position, shape = `x` without its channel axis). Returns the
    /// normalized tensor (zero at unselected positions) together with the
    /// batch mean and biased variance per channel.
    pub fn masked_standardize(&self, x: Var, weights: &Tensor, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap();
        let positions = weights.len();
        let xstd = xv.as_standard_layout();
        let xs = xstd.as_slice().expect("standard layout");
        let ws = weights.as_slice().expect("contiguous");
        let count: f64 = ws.iter().sum();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if count > 0.0 {
            for p in 0..positions {
                if ws[p] != 0.0 {
                    for ch in 0..c {
                        mean[ch] += xs[p * c + ch];
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for p in 0..positions {
                if ws[p] != 0.0 {
                    for ch in 0..c {
                        let d = xs[p * c + ch] - mean[ch];
                        var[ch] += d * d;
                    }
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = Tensor::zeros(xv.raw_dim());
        {
            let os = out.as_slice_mut().unwrap();
            for p in 0..positions {
                if ws[p] != 0.0 {
                    for ch in 0..c {
                        os[p * c + ch] = (xs[p * c + ch] - mean[ch]) * inv_std[ch];
                    }
                }
            }
        }
        let xhat = out.clone();
        let w = weights.clone();
        let inv = inv_std.clone();
        let var_out = self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let gs = g.as_slice().unwrap();
                let hs = xhat.as_slice().unwrap();
                let ws = w.as_slice().unwrap();
                let mut gmean = vec![0.0; c];
                let mut ghmean = vec![0.0; c];
                if count > 0.0 {
                    for p in 0..positions {
                        if ws[p] != 0.0 {
                            for ch in 0..c {
                                gmean[ch] += gs[p * c + ch];
                                ghmean[ch] += gs[p * c + ch] * hs[p * c + ch];
                            }
                        }
                    }
                    gmean.iter_mut().for_each(|m| *m /= count);
                    ghmean.iter_mut().for_each(|m| *m /= count);
                }
                let mut gx = Tensor::zeros(xhat.raw_dim());
                let gxs = gx.as_slice_mut().unwrap();
                for p in 0..positions {
                    if ws[p] != 0.0 {
                        for ch in 0..c {
                            let i = p * c + ch;
                            gxs[i] = inv[ch] * (gs[i] - gmean[ch] - hs[i] * ghmean[ch]);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        );
        (var_out, mean, var)
    }
}

/// Sums every axis but the last.
fn sum_to_last(t: &Tensor) -> Tensor {
    let c = *t.shape().last().unwrap();
    let rows = t.len() / c.max(1);
    let t2 = t.view().into_shape_with_order((rows, c)).unwrap();
    t2.sum_axis(Axis(0)).into_dyn()
}
