//! Permutation-equivariant graph VAE with a node-level Gaussian latent and
//! a factorised decoder `p(B|z) p(V|z,B) p(A|z,B,V) p(E|z,B,V,A)`.

use ndarray::{Array2, Array3, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::dataset::GraphCollection;
use crate::equivariant::{EquivariantLinear, EquivariantModule, Features, StreamDims};
use crate::error::{mismatch, Error, Result};
use crate::graph::{DenseGraph, GraphDims, Permutation, B_ABSENT, B_EXISTS};
use crate::model::{GraphInput, GraphTensors, Trunk};
use crate::nn::{apply_norm_updates, Adam, Ctx, NodeMask, ParamStore};

/// One latent row per node slot, `n × d_z`.
pub type LatentCode = Array2<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: LatentCode,
    pub log_var: LatentCode,
}

/// `z = mean + exp(log_var / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `seed`.
pub fn sample_latent(post: &Posterior, seed: u64) -> LatentCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Array2<f64> = Array2::from_shape_simple_fn(post.mean.raw_dim(), || StandardNormal.sample(&mut rng));
    &post.mean + &(post.log_var.mapv(|lv| (0.5 * lv).exp()) * eps)
}

/// Decoder logits. `logits_a[i][j]` holds `(no edge, edge)` and both edge
/// tensors are symmetric. `existing` are the node slots the `V`, `A`, `E`
/// heads were conditioned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDistribution {
    pub logits_b: Array2<f64>,
    pub logits_v: Array2<f64>,
    pub logits_a: Array3<f64>,
    pub logits_e: Option<Array3<f64>>,
    pub existing: Vec<usize>,
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl GraphDistribution {
    pub fn existence_probability(&self, i: usize) -> f64 {
        softmax(&[self.logits_b[[i, B_EXISTS]], self.logits_b[[i, B_ABSENT]]])[0]
    }

    /// Edge probability; zero on the diagonal and for pairs involving a
    /// non-existing node.
    pub fn edge_probability(&self, i: usize, j: usize) -> f64 {
        if i == j || !self.existing.contains(&i) || !self.existing.contains(&j) {
            return 0.0;
        }
        softmax(&[self.logits_a[[i, j, 0]], self.logits_a[[i, j, 1]]])[1]
    }
}

/// Standard Gumbel noise for one relaxed decode; the edge parts are
/// symmetric in the two node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelNoise {
    pub b: Array2<f64>,
    pub v: Array2<f64>,
    pub a: Array3<f64>,
    pub e: Option<Array3<f64>>,
}

impl GumbelNoise {
    pub fn sample(dims: GraphDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Gumbel::new(0.0, 1.0).unwrap();
        let n = dims.n;
        let b = Array2::from_shape_simple_fn((n, 2), || g.sample(&mut rng));
        let v = Array2::from_shape_simple_fn((n, dims.d_v), || g.sample(&mut rng));
        let mut sym = |d: usize| {
            let mut t = Array3::zeros((n, n, d));
            for i in 0..n {
                for j in i..n {
                    for c in 0..d {
                        let x: f64 = g.sample(&mut rng);
                        t[[i, j, c]] = x;
                        t[[j, i, c]] = x;
                    }
                }
            }
            t
        };
        let a = sym(2);
        let e = dims.d_e.map(sym);
        Self { b, v, a, e }
    }

    /// The noise transported by `σ`, matching a permuted input graph.
    pub fn permuted(&self, p: &Permutation) -> Self {
        Self {
            b: p.permute_rows(&self.b),
            v: p.permute_rows(&self.v),
            a: p.permute_pairs3(&self.a),
            e: self.e.as_ref().map(|e| p.permute_pairs3(e)),
        }
    }
}

fn stack2(parts: &[&Array2<f64>]) -> Tensor {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views).unwrap().into_dyn()
}

fn stack3(parts: &[&Array3<f64>]) -> Tensor {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views).unwrap().into_dyn()
}

/// Relaxed one-hot sample `softmax((logits + g) / τ)` of one categorical.
pub fn gumbel_softmax(logits: &[f64], gumbel: &[f64], tau: f64) -> Vec<f64> {
    let x: Vec<f64> = logits.iter().zip(gumbel).map(|(l, g)| (l + g) / tau).collect();
    softmax(&x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub plateau_patience: usize,
    /// Share of the epochs over which β rises linearly from 0.
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub seed: u64,
    pub norm_momentum: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            learning_rate: 1e-3,
            epochs: 2000,
            plateau_patience: 150,
            warmup_fraction: 0.1,
            batch_size: 64,
            latent_dim: 20,
            channels: 20,
            seed: 0,
            norm_momentum: 0.1,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.beta)
            && self.learning_rate > 0.0
            && self.epochs > 0
            && self.plateau_patience > 0
            && (0.0..=1.0).contains(&self.warmup_fraction)
            && self.batch_size > 0
            && self.latent_dim > 0
            && self.channels > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid VAE settings: {self:?}")));
        }
        Ok(())
    }

    /// β of a given epoch: linear warm-up from 0, then constant.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let warm = (self.warmup_fraction * self.epochs as f64).ceil() as usize;
        if epoch >= warm {
            self.beta
        } else {
            self.beta * epoch as f64 / warm as f64
        }
    }
}

/// Per-graph means of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    pub recon_nll: f64,
    pub kl: f64,
}

struct Head {
    modules: Vec<EquivariantModule>,
    out: EquivariantLinear,
}

impl Head {
    fn forward(&self, ctx: &Ctx, mut x: Features, mask: &NodeMask) -> Result<Features> {
        for m in &self.modules {
            x = m.forward(ctx, x, mask)?;
        }
        self.out.forward(ctx, x, mask, mask)
    }
}

impl std::fmt::Debug for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Head").field("modules", &self.modules.len()).finish()
    }
}

impl Clone for Head {
    fn clone(&self) -> Self {
        Self {
            modules: self.modules.clone(),
            out: self.out.clone(),
        }
    }
}

/// Realised decoder output on a tape: logits and the (hard or relaxed)
/// tensors each downstream head was conditioned on.
pub struct Decoded {
    pub logits_b: Var,
    pub logits_v: Var,
    pub logits_a: Var,
    pub logits_e: Option<Var>,
    pub graph: GraphInput,
}

enum Realize<'a> {
    Mode,
    Gumbel { noise: &'a [GumbelNoise], tau: f64 },
}

#[derive(Clone, Debug)]
pub struct PegVae {
    pub dims: GraphDims,
    pub config: VaeConfig,
    encoder: Trunk,
    head_mean: EquivariantLinear,
    head_log_var: EquivariantLinear,
    dec_b: Head,
    dec_v: Head,
    dec_a: Head,
    dec_e: Option<Head>,
    pub params: ParamStore,
}

const EVAL_CHUNK: usize = 128;

impl PegVae {
    pub fn new(dims: GraphDims, config: &VaeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (c, dz, dv) = (config.channels, config.latent_dim, dims.d_v);
        let p = &mut params;
        let encoder = Trunk::new(p, "vae.enc", dims, c, &mut rng);
        let head_mean = EquivariantLinear::new(p, "vae.enc.mean", StreamDims::new(c, 0), StreamDims::new(dz, 0), &mut rng);
        let head_log_var = EquivariantLinear::new(p, "vae.enc.log_var", StreamDims::new(c, 0), StreamDims::new(dz, 0), &mut rng);
        let node = |k| StreamDims::new(k, 0);
        let dec_b = Head {
            modules: vec![EquivariantModule::new(p, "vae.dec_b.m0", node(dz), node(c), &mut rng)],
            out: EquivariantLinear::new(p, "vae.dec_b.out", node(c), node(2), &mut rng),
        };
        let dec_v = Head {
            modules: vec![EquivariantModule::new(p, "vae.dec_v.m0", node(dz + 2), node(c), &mut rng)],
            out: EquivariantLinear::new(p, "vae.dec_v.out", node(c), node(dv), &mut rng),
        };
        let both = StreamDims::new(c, c);
        let dec_a = Head {
            modules: vec![
                EquivariantModule::new(p, "vae.dec_a.m0", node(dz + 2 + dv), both, &mut rng),
                EquivariantModule::new(p, "vae.dec_a.m1", both, both, &mut rng),
            ],
            out: EquivariantLinear::new(p, "vae.dec_a.out", both, StreamDims::new(0, 2), &mut rng),
        };
        let dec_e = dims.d_e.map(|de| Head {
            modules: vec![
                EquivariantModule::new(p, "vae.dec_e.m0", StreamDims::new(dz + 2 + dv, 1), both, &mut rng),
                EquivariantModule::new(p, "vae.dec_e.m1", both, both, &mut rng),
            ],
            out: EquivariantLinear::new(p, "vae.dec_e.out", both, StreamDims::new(0, de), &mut rng),
        });
        Self {
            dims,
            config: config.clone(),
            encoder,
            head_mean,
            head_log_var,
            dec_b,
            dec_v,
            dec_a,
            dec_e,
            params,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Posterior mean and log-variance `(batch, n, d_z)`. Node sums run over
    /// existing nodes; every slot, padding included, receives a posterior.
    pub fn encode_vars(&self, ctx: &Ctx, input: &GraphInput) -> Result<(Var, Var)> {
        input.check(&ctx.tape, self.dims)?;
        let h = self.encoder.forward(ctx, input)?;
        let full = NodeMask::full(input.batch(), self.dims.n);
        let x = Features { node: Some(h), edge: None };
        let mean = self.head_mean.forward(ctx, x, &input.mask, &full)?.node.unwrap();
        let log_var = self.head_log_var.forward(ctx, x, &input.mask, &full)?.node.unwrap();
        Ok((mean, log_var))
    }

    fn check_latent(&self, tape: &Tape, z: Var) -> Result<usize> {
        let s = tape.shape(z);
        if s.len() != 3 || s[1] != self.dims.n || s[2] != self.config.latent_dim {
            return mismatch(format!(
                "latent has shape {s:?}, expected (batch, {}, {})",
                self.dims.n, self.config.latent_dim
            ));
        }
        Ok(s[0])
    }

    fn logits_b(&self, ctx: &Ctx, z: Var) -> Result<Var> {
        let bsz = self.check_latent(&ctx.tape, z)?;
        let full = NodeMask::full(bsz, self.dims.n);
        Ok(self.dec_b.forward(ctx, Features { node: Some(z), edge: None }, &full)?.node.unwrap())
    }

    fn logits_v(&self, ctx: &Ctx, z: Var, b: Var, mask: &NodeMask) -> Result<Var> {
        let x = ctx.tape.concat_last(&[z, b]);
        Ok(self.dec_v.forward(ctx, Features { node: Some(x), edge: None }, mask)?.node.unwrap())
    }

    fn logits_a(&self, ctx: &Ctx, z: Var, b: Var, v: Var, mask: &NodeMask) -> Result<Var> {
        let x = ctx.tape.concat_last(&[z, b, v]);
        let la = self.dec_a.forward(ctx, Features { node: Some(x), edge: None }, mask)?.edge.unwrap();
        Ok(ctx.tape.symmetrize(la))
    }

    fn logits_e(&self, ctx: &Ctx, z: Var, b: Var, v: Var, a: Var, mask: &NodeMask) -> Result<Option<Var>> {
        let Some(head) = &self.dec_e else { return Ok(None) };
        let x = ctx.tape.concat_last(&[z, b, v]);
        let le = head.forward(ctx, Features { node: Some(x), edge: Some(a) }, mask)?.edge.unwrap();
        Ok(Some(ctx.tape.symmetrize(le)))
    }

    fn decode(&self, ctx: &Ctx, z: Var, how: Realize) -> Result<Decoded> {
        let tape = &ctx.tape;
        let bsz = self.check_latent(tape, z)?;
        let n = self.dims.n;
        if let Realize::Gumbel { noise, tau } = &how {
            if noise.len() != bsz {
                return mismatch(format!("{} noise draws for a batch of {bsz}", noise.len()));
            }
            if !(*tau > 0.0) {
                return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
            }
        }
        // relaxed sample of one factor: softmax((logits + g) / τ)
        let relax = |logits: Var, g: Tensor, tau: f64| tape.softmax_last(tape.scale(tape.add_const(logits, &g), 1.0 / tau));

        let logits_b = self.logits_b(ctx, z)?;
        let (b, existing) = match &how {
            Realize::Mode => {
                let lb = tape.value(logits_b);
                let existing: Vec<Vec<usize>> = (0..bsz)
                    .map(|k| (0..n).filter(|&i| lb[[k, i, B_EXISTS]] >= lb[[k, i, B_ABSENT]]).collect())
                    .collect();
                let mut hard = Tensor::zeros(IxDyn(&[bsz, n, 2]));
                for k in 0..bsz {
                    for i in 0..n {
                        hard[[k, i, B_ABSENT]] = 1.0;
                    }
                    for &i in &existing[k] {
                        hard[[k, i, B_ABSENT]] = 0.0;
                        hard[[k, i, B_EXISTS]] = 1.0;
                    }
                }
                (tape.constant(hard), existing)
            }
            Realize::Gumbel { noise, tau } => {
                let g = stack2(&noise.iter().map(|x| &x.b).collect::<Vec<_>>());
                let soft = relax(logits_b, g, *tau);
                let sv = tape.value(soft);
                let existing = (0..bsz)
                    .map(|k| (0..n).filter(|&i| sv[[k, i, B_EXISTS]] >= sv[[k, i, B_ABSENT]]).collect())
                    .collect();
                (soft, existing)
            }
        };
        let mask = NodeMask::new(n, existing);
        let node_col = mask.node_weights_col();
        let pair_col = mask.offdiag_pair_weights_col();

        let logits_v = self.logits_v(ctx, z, b, &mask)?;
        let v = match &how {
            Realize::Mode => tape.constant(one_hot_argmax(&tape.value(logits_v), &node_col)),
            Realize::Gumbel { noise, tau } => {
                let g = stack2(&noise.iter().map(|x| &x.v).collect::<Vec<_>>());
                tape.mul_const(relax(logits_v, g, *tau), &node_col)
            }
        };

        let logits_a = self.logits_a(ctx, z, b, v, &mask)?;
        let a = match &how {
            Realize::Mode => {
                let la = tape.value(logits_a);
                let mut hard = Tensor::zeros(IxDyn(&[bsz, n, n, 1]));
                for k in 0..bsz {
                    for i in 0..n {
                        for j in 0..n {
                            if pair_col[[k, i, j, 0]] == 1.0 && la[[k, i, j, 1]] > la[[k, i, j, 0]] {
                                hard[[k, i, j, 0]] = 1.0;
                            }
                        }
                    }
                }
                tape.constant(hard)
            }
            Realize::Gumbel { noise, tau } => {
                let g = stack3(&noise.iter().map(|x| &x.a).collect::<Vec<_>>());
                let soft = relax(logits_a, g, *tau);
                tape.mul_const(tape.slice_last(soft, 1, 2), &pair_col)
            }
        };

        let logits_e = self.logits_e(ctx, z, b, v, a, &mask)?;
        let e = match (&how, logits_e) {
            (_, None) => None,
            (Realize::Mode, Some(le)) => {
                let av = tape.value(a);
                Some(tape.constant(one_hot_argmax(&tape.value(le), &av)))
            }
            (Realize::Gumbel { noise, tau }, Some(le)) => {
                let parts: Option<Vec<&Array3<f64>>> = noise.iter().map(|x| x.e.as_ref()).collect();
                let Some(parts) = parts else {
                    return mismatch("edge-attribute noise missing");
                };
                Some(tape.mul_last(relax(le, stack3(&parts), *tau), a))
            }
        };
        Ok(Decoded {
            logits_b,
            logits_v,
            logits_a,
            logits_e,
            graph: GraphInput { b, v, a, e, mask },
        })
    }

    /// Greedy decode through `B → V → A → E`, each head conditioned on the
    /// argmax of the previous factors.
    pub fn decode_mode_vars(&self, ctx: &Ctx, z: Var) -> Result<Decoded> {
        self.decode(ctx, z, Realize::Mode)
    }

    /// Gumbel-softmax relaxed decode. The hard node mask is the argmax of
    /// the relaxed `B`; `V` is zeroed on absent nodes, `A` on the diagonal
    /// and absent pairs, and `E` is scaled by the relaxed `A`.
    pub fn decode_gumbel_vars(&self, ctx: &Ctx, z: Var, noise: &[GumbelNoise], tau: f64) -> Result<Decoded> {
        self.decode(ctx, z, Realize::Gumbel { noise, tau })
    }

    /// Teacher-forced mean per-graph `(total, recon, kl)` with fixed
    /// reparametrization noise `eps` of shape `(batch, n, d_z)`.
    pub fn elbo_vars(&self, ctx: &Ctx, graphs: &[&DenseGraph], eps: &Tensor, beta: f64) -> Result<(Var, Var, Var)> {
        let tape = &ctx.tape;
        let input = GraphInput::from_graphs(tape, graphs)?;
        let bsz = input.batch();
        let (mean, log_var) = self.encode_vars(ctx, &input)?;
        if tape.shape(mean) != eps.shape() {
            return mismatch(format!("noise shape {:?}, latent {:?}", eps.shape(), tape.shape(mean)));
        }
        let std = tape.exp(tape.scale(log_var, 0.5));
        let z = tape.add(mean, tape.mul_const(std, eps));

        let t = GraphTensors::from_graphs(graphs)?;
        let mask = &input.mask;
        let n = self.dims.n;
        let nll = |logits: Var, target: &Tensor| tape.sum(tape.mul_const(tape.log_softmax_last(logits), &target.mapv(|x| -x)));

        let logits_b = self.logits_b(ctx, z)?;
        let mut recon = nll(logits_b, &t.b);
        let logits_v = self.logits_v(ctx, z, input.b, mask)?;
        recon = tape.add(recon, nll(logits_v, &t.v));
        let logits_a = self.logits_a(ctx, z, input.b, input.v, mask)?;
        let mut target_a = Tensor::zeros(IxDyn(&[bsz, n, n, 2]));
        for (k, nodes) in mask.existing.iter().enumerate() {
            for (x, &i) in nodes.iter().enumerate() {
                for &j in &nodes[x + 1..] {
                    let edge = t.a[[k, i, j, 0]];
                    target_a[[k, i, j, 0]] = 1.0 - edge;
                    target_a[[k, i, j, 1]] = edge;
                }
            }
        }
        recon = tape.add(recon, nll(logits_a, &target_a));
        if let Some(logits_e) = self.logits_e(ctx, z, input.b, input.v, input.a, mask)? {
            let mut target_e = t.e.clone().expect("edge attributes");
            for k in 0..bsz {
                for i in 0..n {
                    for j in 0..=i {
                        target_e.slice_mut(ndarray::s![k, i, j, ..]).fill(0.0);
                    }
                }
            }
            recon = tape.add(recon, nll(logits_e, &target_e));
        }

        let count = tape.value(mean).len() as f64;
        let kl_sum = tape.sub(
            tape.add(tape.sum(tape.square(mean)), tape.sum(tape.exp(log_var))),
            tape.sum(log_var),
        );
        let kl = tape.scale(tape.add_const(kl_sum, &crate::autodiff::scalar(-count)), 0.5);
        let inv = 1.0 / bsz as f64;
        let recon = tape.scale(recon, inv);
        let kl = tape.scale(kl, inv);
        let total = tape.add(recon, tape.scale(kl, beta));
        Ok((total, recon, kl))
    }

    fn eval_chunks<T>(&self, n_items: usize, f: impl Fn(&Ctx, std::ops::Range<usize>) -> Result<Vec<T>>) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(n_items);
        let mut start = 0;
        while start < n_items {
            let end = (start + EVAL_CHUNK).min(n_items);
            let ctx = Ctx::eval(&self.params);
            out.extend(f(&ctx, start..end)?);
            start = end;
        }
        Ok(out)
    }

    pub fn encode(&self, graphs: &[&DenseGraph]) -> Result<Vec<Posterior>> {
        self.eval_chunks(graphs.len(), |ctx, r| {
            let input = GraphInput::from_graphs(&ctx.tape, &graphs[r])?;
            let (m, lv) = self.encode_vars(ctx, &input)?;
            let (m, lv) = (ctx.tape.value(m), ctx.tape.value(lv));
            Ok((0..input.batch())
                .map(|k| Posterior {
                    mean: to_matrix(&m, k),
                    log_var: to_matrix(&lv, k),
                })
                .collect())
        })
    }

    fn latent_batch(&self, zs: &[LatentCode]) -> Result<Tensor> {
        let want = (self.dims.n, self.config.latent_dim);
        if let Some(z) = zs.iter().find(|z| z.dim() != want) {
            return mismatch(format!("latent is {:?}, expected {want:?}", z.dim()));
        }
        Ok(stack2(&zs.iter().collect::<Vec<_>>()))
    }

    pub fn decode_mode(&self, zs: &[LatentCode]) -> Result<Vec<DenseGraph>> {
        let batch = self.latent_batch(zs)?;
        self.eval_chunks(zs.len(), |ctx, r| {
            let z = ctx.tape.constant(batch.slice_axis(Axis(0), r.into()).to_owned());
            let d = self.decode_mode_vars(ctx, z)?;
            graphs_from_hard(&ctx.tape, &d.graph, self.dims)
        })
    }

    /// Decoder logits with each head conditioned on the mode of the
    /// previous factors.
    pub fn decode_distribution(&self, zs: &[LatentCode]) -> Result<Vec<GraphDistribution>> {
        let batch = self.latent_batch(zs)?;
        self.eval_chunks(zs.len(), |ctx, r| {
            let z = ctx.tape.constant(batch.slice_axis(Axis(0), r.into()).to_owned());
            let d = self.decode_mode_vars(ctx, z)?;
            let tape = &ctx.tape;
            let (lb, lv, la) = (tape.value(d.logits_b), tape.value(d.logits_v), tape.value(d.logits_a));
            let le = d.logits_e.map(|e| tape.value(e));
            Ok((0..d.graph.batch())
                .map(|k| GraphDistribution {
                    logits_b: to_matrix(&lb, k),
                    logits_v: to_matrix(&lv, k),
                    logits_a: to_cube(&la, k),
                    logits_e: le.as_ref().map(|e| to_cube(e, k)),
                    existing: d.graph.mask.existing[k].clone(),
                })
                .collect())
        })
    }

    /// Relaxed tensors `(b, v, a, e)` of one decode, as plain arrays.
    pub fn decode_gumbel(&self, z: &LatentCode, tau: f64, seed: u64) -> Result<RelaxedGraph> {
        let batch = self.latent_batch(std::slice::from_ref(z))?;
        let ctx = Ctx::eval(&self.params);
        let noise = [GumbelNoise::sample(self.dims, seed)];
        let d = self.decode_gumbel_vars(&ctx, ctx.tape.constant(batch), &noise, tau)?;
        let tape = &ctx.tape;
        let a = tape.value(d.graph.a);
        Ok(RelaxedGraph {
            b: to_matrix(&tape.value(d.graph.b), 0),
            v: to_matrix(&tape.value(d.graph.v), 0),
            a: to_cube(&a, 0).index_axis(Axis(2), 0).to_owned(),
            e: d.graph.e.map(|e| to_cube(&tape.value(e), 0)),
        })
    }

    /// Mean ELBO terms over `graphs` in evaluation mode with
    /// reparametrization noise drawn from `seed`.
    pub fn evaluate_elbo(&self, graphs: &[&DenseGraph], beta: f64, seed: u64) -> Result<ElboTerms> {
        if graphs.is_empty() {
            return Err(Error::EmptyDataset("no graphs to evaluate".into()));
        }
        let eps = self.noise_for(graphs.len(), seed);
        let parts = self.eval_chunks(graphs.len(), |ctx, r| {
            let e = eps.slice_axis(Axis(0), r.clone().into()).to_owned();
            let (t, rc, kl) = self.elbo_vars(ctx, &graphs[r.clone()], &e, beta)?;
            let w = r.len() as f64;
            Ok(vec![(ctx.tape.scalar_value(t) * w, ctx.tape.scalar_value(rc) * w, ctx.tape.scalar_value(kl) * w)])
        })?;
        let m = graphs.len() as f64;
        let sum = parts.iter().fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
        Ok(ElboTerms {
            total: sum.0 / m,
            recon_nll: sum.1 / m,
            kl: sum.2 / m,
        })
    }

    /// ELBO terms of a single graph.
    pub fn elbo_loss(&self, g: &DenseGraph, beta: f64, seed: u64) -> Result<ElboTerms> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
        }
        self.evaluate_elbo(&[g], beta, seed)
    }

    fn noise_for(&self, batch: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_simple_fn(IxDyn(&[batch, self.dims.n, self.config.latent_dim]), || {
            StandardNormal.sample(&mut rng)
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint<VaeConfig> {
        Checkpoint::new("pegvae", self.dims, self.config.clone(), self.config.seed, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: Checkpoint<VaeConfig>) -> Result<Self> {
        ckpt.expect_kind("pegvae")?;
        let mut model = Self::new(ckpt.dims, &ckpt.config);
        if !model.params.same_layout(&ckpt.params) {
            return Err(Error::Checkpoint("VAE parameter layout does not match its configuration".into()));
        }
        model.params = ckpt.params;
        Ok(model)
    }
}

/// Plain relaxed graph tensors of one Gumbel-softmax decode.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedGraph {
    pub b: Array2<f64>,
    pub v: Array2<f64>,
    pub a: Array2<f64>,
    pub e: Option<Array3<f64>>,
}

fn to_matrix(t: &Tensor, k: usize) -> Array2<f64> {
    t.index_axis(Axis(0), k).to_owned().into_dimensionality().unwrap()
}

fn to_cube(t: &Tensor, k: usize) -> Array3<f64> {
    t.index_axis(Axis(0), k).to_owned().into_dimensionality().unwrap()
}

/// One-hot of the per-position argmax (first maximum on ties), kept only
/// where `keep` (broadcast over channels) is 1.
fn one_hot_argmax(logits: &Tensor, keep: &Tensor) -> Tensor {
    let last = logits.ndim() - 1;
    let mut out = Tensor::zeros(logits.raw_dim());
    let keep = keep.broadcast(logits.raw_dim()).unwrap();
    for ((lane, mut o), kl) in logits
        .lanes(Axis(last))
        .into_iter()
        .zip(out.lanes_mut(Axis(last)))
        .zip(keep.lanes(Axis(last)))
    {
        if kl[0] != 1.0 {
            continue;
        }
        let mut best = 0;
        for (c, &x) in lane.iter().enumerate() {
            if x > lane[best] {
                best = c;
            }
        }
        o[best] = 1.0;
    }
    out
}

fn graphs_from_hard(tape: &Tape, g: &GraphInput, dims: GraphDims) -> Result<Vec<DenseGraph>> {
    let (v, a) = (tape.value(g.v), tape.value(g.a));
    let e = g.e.map(|e| tape.value(e));
    let n = dims.n;
    Ok((0..g.batch())
        .map(|k| {
            let mut out = DenseGraph::empty(dims);
            for &i in &g.mask.existing[k] {
                let label = (0..dims.d_v).find(|&c| v[[k, i, c]] == 1.0).unwrap_or(0);
                out.set_node(i, Some(label));
            }
            for i in 0..n {
                for j in i + 1..n {
                    if a[[k, i, j, 0]] == 1.0 {
                        let label = e.as_ref().map(|e| (0..dims.d_e.unwrap()).find(|&c| e[[k, i, j, c]] == 1.0).unwrap_or(0));
                        out.set_edge(i, j, Some(label));
                    }
                }
            }
            out
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub train: ElboTerms,
    /// Validation terms with the target β.
    pub val: ElboTerms,
}

/// Seed of the fixed validation noise.
const VAL_NOISE_SEED: u64 = 0x5eed;

/// Minimises the mean per-graph β-ELBO with Adam; β warms up linearly and
/// the learning rate halves after `plateau_patience` epochs without a new
/// best validation loss. Returns the parameters with the best validation
/// loss.
pub fn train_pegvae(train: &GraphCollection, val: &GraphCollection, config: &VaeConfig) -> Result<(PegVae, Vec<VaeEpoch>)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: empty training or validation part", train.name)));
    }
    if train.dims != val.dims {
        return Err(Error::SizeMismatch(format!("train {:?} vs val {:?}", train.dims, val.dims)));
    }
    let mut model = PegVae::new(train.dims, config);
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_graphs = val.graph_refs();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        let beta = config.beta_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let graphs: Vec<&DenseGraph> = batch.iter().map(|&i| &train.graphs[i]).collect();
            let eps = Tensor::from_shape_simple_fn(IxDyn(&[batch.len(), train.dims.n, config.latent_dim]), || {
                StandardNormal.sample(&mut rng)
            });
            let (grads, updates, terms) = {
                let ctx = Ctx::train(&model.params);
                let (total, recon, kl) = model.elbo_vars(&ctx, &graphs, &eps, beta)?;
                let terms = (ctx.tape.scalar_value(total), ctx.tape.scalar_value(recon), ctx.tape.scalar_value(kl));
                let mut g = ctx.tape.backward(total);
                (ctx.param_grads(&mut g), ctx.take_norm_updates(), terms)
            };
            if !(terms.0.is_finite() && terms.1.is_finite() && terms.2.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite VAE loss at epoch {epoch}: total {}, recon {}, kl {}",
                    terms.0, terms.1, terms.2
                )));
            }
            adam.step(&mut model.params, &grads);
            apply_norm_updates(&mut model.params, &updates, config.norm_momentum);
            let w = batch.len() as f64;
            sums = (sums.0 + terms.0 * w, sums.1 + terms.1 * w, sums.2 + terms.2 * w);
        }
        let m = train.len() as f64;
        let val_terms = model.evaluate_elbo(&val_graphs, config.beta, VAL_NOISE_SEED)?;
        if !val_terms.total.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        let record = VaeEpoch {
            epoch,
            beta,
            learning_rate: adam.lr,
            train: ElboTerms {
                total: sums.0 / m,
                recon_nll: sums.1 / m,
                kl: sums.2 / m,
            },
            val: val_terms,
        };
        log::debug!("vae {record:?}");
        history.push(record);
        if best.as_ref().is_none_or(|(b, _)| val_terms.total < *b) {
            best = Some((val_terms.total, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.plateau_patience {
                adam.lr *= 0.5;
                since_best = 0;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}
