//! Parameter storage, the forward context binding parameters to a tape,
//! node masks, dense layers and the Adam optimizer.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{Array, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::graph::DenseGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics) are stored but never optimized.
    pub trainable: bool,
}

/// Flat, ordered parameter list. Models keep [`ParamId`]s into it; the
/// order of registration is the serialization order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .map(ParamId)
            .collect()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// True when both stores hold the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}

pub fn normal_init<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).unwrap();
    Array::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Batch statistics of one normalization layer from a training forward pass.
#[derive(Clone, Debug)]
pub struct NormUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

/// Binds a [`ParamStore`] to a fresh [`Tape`] for one forward/backward pass.
pub struct Ctx<'a> {
    pub tape: Rc<Tape>,
    store: &'a ParamStore,
    bound: RefCell<HashMap<ParamId, Var>>,
    train: bool,
    track_params: bool,
    norm_updates: RefCell<Vec<NormUpdate>>,
}

impl<'a> Ctx<'a> {
    /// Training mode: batch statistics, parameters receive gradients.
    pub fn train(store: &'a ParamStore) -> Self {
        Self::with_mode(store, true, true)
    }

    /// Evaluation mode with parameter gradients (used by gradient checks).
    pub fn eval_with_param_grads(store: &'a ParamStore) -> Self {
        Self::with_mode(store, false, true)
    }

    /// Evaluation mode: running statistics, parameters are constants.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self::with_mode(store, false, false)
    }

    pub fn with_mode(store: &'a ParamStore, train: bool, track_params: bool) -> Self {
        Self {
            tape: Rc::new(Tape::new()),
            store,
            bound: RefCell::new(HashMap::new()),
            train,
            track_params,
            norm_updates: RefCell::new(Vec::new()),
        }
    }

    /// A context for another parameter store recording on the same tape,
    /// so that two models can be chained in one differentiable graph.
    pub fn sibling<'b>(&self, store: &'b ParamStore, train: bool, track_params: bool) -> Ctx<'b> {
        Ctx {
            tape: Rc::clone(&self.tape),
            store,
            bound: RefCell::new(HashMap::new()),
            train,
            track_params,
            norm_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// The tape variable of a parameter, created on first use.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow().get(&id) {
            return *v;
        }
        let entry = &self.store.entries[id.0];
        let v = if self.track_params && entry.trainable {
            self.tape.leaf(entry.value.clone())
        } else {
            self.tape.constant(entry.value.clone())
        };
        self.bound.borrow_mut().insert(id, v);
        v
    }

    pub(crate) fn record_norm(&self, update: NormUpdate) {
        self.norm_updates.borrow_mut().push(update);
    }

    pub fn take_norm_updates(&self) -> Vec<NormUpdate> {
        std::mem::take(&mut self.norm_updates.borrow_mut())
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .borrow()
            .iter()
            .filter_map(|(id, v)| grads.take(*v).map(|g| (*id, g)))
            .collect();
        out.sort_by_key(|(id, _)| id.0);
        out
    }
}

/// Applies batch statistics to running statistics with the given momentum.
pub fn apply_norm_updates(store: &mut ParamStore, updates: &[NormUpdate], momentum: f64) {
    for u in updates {
        if u.count < 1.0 {
            continue;
        }
        let unbias = if u.count > 1.0 { u.count / (u.count - 1.0) } else { 1.0 };
        let rm = store.get_mut(u.running_mean);
        for (r, m) in rm.iter_mut().zip(&u.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        let rv = store.get_mut(u.running_var);
        for (r, v) in rv.iter_mut().zip(&u.var) {
            *r = (1.0 - momentum) * *r + momentum * v * unbias;
        }
    }
}

/// Existing node slots of every graph in a batch, with the dense weight
/// tensors used for masking node and pair positions.
#[derive(Clone, Debug)]
pub struct NodeMask {
    pub n: usize,
    pub existing: Rc<Vec<Vec<usize>>>,
    /// `(batch, n)`
    pub node_weights: Tensor,
    /// `(batch, n, n)`
    pub pair_weights: Tensor,
}

impl NodeMask {
    pub fn new(n: usize, existing: Vec<Vec<usize>>) -> Self {
        let bsz = existing.len();
        let mut node_weights = Tensor::zeros(IxDyn(&[bsz, n]));
        let mut pair_weights = Tensor::zeros(IxDyn(&[bsz, n, n]));
        for (b, nodes) in existing.iter().enumerate() {
            for &i in nodes {
                node_weights[[b, i]] = 1.0;
                for &j in nodes {
                    pair_weights[[b, i, j]] = 1.0;
                }
            }
        }
        Self {
            n,
            existing: Rc::new(existing),
            node_weights,
            pair_weights,
        }
    }

    /// Every slot of every graph counts as present.
    pub fn full(batch: usize, n: usize) -> Self {
        Self::new(n, vec![(0..n).collect(); batch])
    }

    pub fn from_graphs(graphs: &[&DenseGraph]) -> Self {
        let n = graphs.first().map_or(0, |g| g.n());
        Self::new(n, graphs.iter().map(|g| g.existing_nodes()).collect())
    }

    pub fn batch(&self) -> usize {
        self.existing.len()
    }

    pub fn node_weights_col(&self) -> Tensor {
        self.node_weights.clone().insert_axis(ndarray::Axis(2))
    }

    pub fn pair_weights_col(&self) -> Tensor {
        self.pair_weights.clone().insert_axis(ndarray::Axis(3))
    }

    /// Pairs of distinct existing nodes, `(batch, n, n, 1)`.
    pub fn offdiag_pair_weights_col(&self) -> Tensor {
        let mut w = self.pair_weights.clone();
        for b in 0..self.batch() {
            for i in 0..self.n {
                w[[b, i, i]] = 0.0;
            }
        }
        w.insert_axis(ndarray::Axis(3))
    }
}

/// Fully connected layer over the last axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / d_in.max(1) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), normal_init(&[d_in, d_out], std, rng), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(IxDyn(&[d_out])), true),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        let h = ctx.tape.matmul_last(x, ctx.param(self.weight));
        ctx.tape.add_last(h, ctx.param(self.bias))
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<usize, Tensor>,
    v: HashMap<usize, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update of `values` keyed by slot, with matching gradients.
    pub fn step_tensor(&mut self, slot: usize, value: &mut Tensor, grad: &Tensor) {
        let m = self.m.entry(slot).or_insert_with(|| Tensor::zeros(grad.raw_dim()));
        let v = self.v.entry(slot).or_insert_with(|| Tensor::zeros(grad.raw_dim()));
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        ndarray::Zip::from(value)
            .and(m)
            .and(v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
    }

    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.tick();
        for (id, g) in grads {
            let value = &mut store.entries[id.0].value;
            self.step_tensor(id.0, value, g);
        }
    }
}
