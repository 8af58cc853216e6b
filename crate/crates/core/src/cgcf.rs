//! Classifier-guided counterfactuals by gradient descent in the VAE latent
//! space, plus three latent-space baselines.

use ndarray::{Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::classifier::Classifier;
use crate::dataset::GraphCollection;
use crate::error::{mismatch, Error, Result};
use crate::graph::{validate, DenseGraph, GraphDims, GraphRecord};
use crate::nn::{Adam, Ctx};
use crate::vae::{GumbelNoise, LatentCode, PegVae};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfOptimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    /// Step size of the latent updates.
    pub epsilon: f64,
    /// Maximum number of updates.
    pub iterations: usize,
    /// Weight of `‖z‖` in the loss.
    pub lambda: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub k_nn: usize,
    pub seed: u64,
    pub optimizer: CfOptimizer,
    /// Factuals optimised together on one tape.
    pub chunk_size: usize,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            iterations: 1000,
            lambda: 1.0,
            tau: 1.0,
            k_nn: 10,
            seed: 0,
            optimizer: CfOptimizer::Adam,
            chunk_size: 64,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0 && self.lambda >= 0.0 && self.tau > 0.0 && self.k_nn >= 1 && self.chunk_size >= 1;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid counterfactual settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Classifier-guided latent traversal.
    Cgcf,
    /// Decoded sample of the prior.
    Random,
    /// Nearest training graph with the desired dataset label.
    Nn,
    /// Decoded mean of the k nearest desired-label training latents.
    KnnMean,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cgcf, Method::Random, Method::Nn, Method::KnnMean];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cgcf => "cgcf",
            Method::Random => "random",
            Method::Nn => "nn",
            Method::KnnMean => "knn_mean",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Cgcf => "Classifier Guided CF",
            Method::Random => "Random Sample",
            Method::Nn => "Graph of NN from Training",
            Method::KnnMean => "Decoded Mean of k-NN",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualResult {
    /// Position of the factual in the queried batch; seeds derive from it.
    pub index: usize,
    pub method: Method,
    pub factual: DenseGraph,
    /// Classifier prediction for the factual.
    pub factual_label: usize,
    pub desired_label: usize,
    pub counterfactual: DenseGraph,
    pub predicted_label: usize,
    pub flipped: bool,
    pub iterations_used: usize,
    pub z_factual: LatentCode,
    pub z_counterfactual: LatentCode,
    /// Loss before each update while the sample was active.
    pub loss_trajectory: Vec<f64>,
    pub z_norm_trajectory: Vec<f64>,
    /// Training-set index of the returned graph (nearest-neighbour baseline).
    pub source_index: Option<usize>,
}

/// Serialisable form of a result with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub index: usize,
    pub method: Method,
    pub config_hash: String,
    pub seed: u64,
    pub dims: GraphDims,
    pub factual: GraphRecord,
    pub factual_label: usize,
    pub desired_label: usize,
    pub counterfactual: GraphRecord,
    pub predicted_label: usize,
    pub flipped: bool,
    pub iterations_used: usize,
    pub z_factual: LatentCode,
    pub z_counterfactual: LatentCode,
    pub loss_trajectory: Vec<f64>,
    pub z_norm_trajectory: Vec<f64>,
    pub source_index: Option<usize>,
}

impl CounterfactualRecord {
    pub fn from_result(r: &CounterfactualResult, config_hash: &str, seed: u64) -> Self {
        Self {
            index: r.index,
            method: r.method,
            config_hash: config_hash.to_string(),
            seed,
            dims: r.factual.dims(),
            factual: GraphRecord::from_graph(&r.factual),
            factual_label: r.factual_label,
            desired_label: r.desired_label,
            counterfactual: GraphRecord::from_graph(&r.counterfactual),
            predicted_label: r.predicted_label,
            flipped: r.flipped,
            iterations_used: r.iterations_used,
            z_factual: r.z_factual.clone(),
            z_counterfactual: r.z_counterfactual.clone(),
            loss_trajectory: r.loss_trajectory.clone(),
            z_norm_trajectory: r.z_norm_trajectory.clone(),
            source_index: r.source_index,
        }
    }

    pub fn to_result(&self) -> Result<CounterfactualResult> {
        let r = CounterfactualResult {
            index: self.index,
            method: self.method,
            factual: self.factual.to_graph(self.dims)?,
            factual_label: self.factual_label,
            desired_label: self.desired_label,
            counterfactual: self.counterfactual.to_graph(self.dims)?,
            predicted_label: self.predicted_label,
            flipped: self.flipped,
            iterations_used: self.iterations_used,
            z_factual: self.z_factual.clone(),
            z_counterfactual: self.z_counterfactual.clone(),
            loss_trajectory: self.loss_trajectory.clone(),
            z_norm_trajectory: self.z_norm_trajectory.clone(),
            source_index: self.source_index,
        };
        if r.flipped != (r.predicted_label == r.desired_label) {
            return Err(Error::InvalidArgument(format!("record {}: flip flag disagrees with labels", self.index)));
        }
        if r.z_factual.dim() != r.z_counterfactual.dim() {
            return mismatch(format!("record {}: latent shapes differ", self.index));
        }
        Ok(r)
    }
}

/// Mixes `parts` into `base` (SplitMix64 finaliser per step).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Gumbel noise used by [`generate_cgcf`] for sample `index` at `iteration`.
pub fn iteration_noise(dims: GraphDims, seed: u64, index: usize, iteration: usize) -> GumbelNoise {
    GumbelNoise::sample(dims, derive_seed(seed, &[1, index as u64, iteration as u64]))
}

/// `1 - prediction` for each factual.
pub fn default_desired(clf: &Classifier, factuals: &[&DenseGraph]) -> Result<Vec<usize>> {
    Ok(clf.predict(factuals)?.into_iter().map(|y| 1 - y).collect())
}

fn check_models(vae: &PegVae, clf: &Classifier, factuals: &[&DenseGraph], desired: &[usize]) -> Result<()> {
    if vae.dims != clf.dims {
        return mismatch(format!("VAE dims {:?} vs classifier dims {:?}", vae.dims, clf.dims));
    }
    if factuals.len() != desired.len() {
        return mismatch(format!("{} factuals, {} desired labels", factuals.len(), desired.len()));
    }
    if let Some(g) = factuals.iter().find(|g| g.dims() != vae.dims) {
        return mismatch(format!("factual dims {:?}, models expect {:?}", g.dims(), vae.dims));
    }
    if let Some(&y) = desired.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("desired label {y} is not binary")));
    }
    Ok(())
}

/// Counterfactual loss of a latent batch on an existing tape: returns the
/// weighted total `Σ_k w_k (CE_k + λ‖z_k‖)` together with the per-sample
/// log-probabilities `(batch, 2)` and norms `(batch,)`.
#[allow(clippy::too_many_arguments)]
pub fn cf_loss_vars(
    ctx: &Ctx,
    vae: &PegVae,
    clf: &Classifier,
    z: Var,
    desired: &[usize],
    weights: &[f64],
    lambda: f64,
    noise: &[GumbelNoise],
    tau: f64,
) -> Result<(Var, Var, Var)> {
    let tape = &ctx.tape;
    let decoded = vae.decode_gumbel_vars(ctx, z, noise, tau)?;
    let cctx = ctx.sibling(&clf.params, false, false);
    let (logits, _) = clf.forward(&cctx, &decoded.graph)?;
    let logp = tape.log_softmax_last(logits);
    let bsz = desired.len();
    let mut target = Tensor::zeros(IxDyn(&[bsz, 2]));
    for (k, &y) in desired.iter().enumerate() {
        target[[k, y]] = -weights[k];
    }
    let w = Tensor::from_shape_vec(IxDyn(&[bsz]), weights.iter().map(|w| w * lambda).collect()).unwrap();
    let norms = tape.norms_per_sample(z);
    let total = tape.add(tape.sum(tape.mul_const(logp, &target)), tape.sum(tape.mul_const(norms, &w)));
    Ok((total, logp, norms))
}

/// `CE(C(decode_gumbel(z)), y_D) + λ‖z‖` for one latent, with the Gumbel
/// noise drawn from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn cf_loss(vae: &PegVae, clf: &Classifier, z: &LatentCode, desired: usize, lambda: f64, tau: f64, seed: u64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    if z.dim() != (vae.dims.n, vae.latent_dim()) {
        return mismatch(format!("latent is {:?}", z.dim()));
    }
    let ctx = Ctx::eval(&vae.params);
    let zv = ctx.tape.constant(z.clone().insert_axis(Axis(0)).into_dyn());
    let noise = [GumbelNoise::sample(vae.dims, seed)];
    let (total, _, _) = cf_loss_vars(&ctx, vae, clf, zv, &[desired], &[1.0], lambda, &noise, tau)?;
    Ok(ctx.tape.scalar_value(total))
}

fn stack_latents(zs: &[LatentCode]) -> Tensor {
    let views: Vec<_> = zs.iter().map(|z| z.view()).collect();
    ndarray::stack(Axis(0), &views).unwrap().into_dyn()
}

fn unstack_latents(z: &Tensor) -> Vec<LatentCode> {
    z.outer_iter().map(|row| row.to_owned().into_dimensionality().unwrap()).collect()
}

/// Runs the classifier-guided search for each factual. Factuals are
/// processed in independent chunks; a sample's result does not depend on
/// the chunking.
pub fn generate_cgcf(
    vae: &PegVae,
    clf: &Classifier,
    factuals: &[&DenseGraph],
    desired: &[usize],
    config: &CfConfig,
) -> Result<Vec<CounterfactualResult>> {
    let dims = vae.dims;
    let seed = config.seed;
    generate_cgcf_with_noise(vae, clf, factuals, desired, config, &|index, it| iteration_noise(dims, seed, index, it))
}

/// [`generate_cgcf`] with caller-supplied Gumbel noise for `(index, iteration)`.
pub fn generate_cgcf_with_noise(
    vae: &PegVae,
    clf: &Classifier,
    factuals: &[&DenseGraph],
    desired: &[usize],
    config: &CfConfig,
    noise: &(dyn Fn(usize, usize) -> GumbelNoise + Sync),
) -> Result<Vec<CounterfactualResult>> {
    config.validate()?;
    check_models(vae, clf, factuals, desired)?;
    let ids: Vec<usize> = (0..factuals.len()).collect();
    let chunks: Vec<Result<Vec<CounterfactualResult>>> = ids
        .par_chunks(config.chunk_size)
        .map(|chunk| {
            let graphs: Vec<&DenseGraph> = chunk.iter().map(|&i| factuals[i]).collect();
            let want: Vec<usize> = chunk.iter().map(|&i| desired[i]).collect();
            cgcf_chunk(vae, clf, chunk, &graphs, &want, config, noise)
        })
        .collect();
    let mut out = Vec::with_capacity(factuals.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn cgcf_chunk(
    vae: &PegVae,
    clf: &Classifier,
    ids: &[usize],
    factuals: &[&DenseGraph],
    desired: &[usize],
    config: &CfConfig,
    noise: &(dyn Fn(usize, usize) -> GumbelNoise + Sync),
) -> Result<Vec<CounterfactualResult>> {
    let bsz = factuals.len();
    let factual_labels = clf.predict(factuals)?;
    let z0: Vec<LatentCode> = vae.encode(factuals)?.into_iter().map(|p| p.mean).collect();
    let mut z = stack_latents(&z0);
    let mut frozen: Vec<Option<usize>> = vec![None; bsz];
    let mut losses = vec![Vec::new(); bsz];
    let mut norms_seen = vec![Vec::new(); bsz];
    let mut adam = Adam::new(config.epsilon);
    let mut updates = 0;
    for it in 0..config.iterations {
        let decoded = vae.decode_mode(&unstack_latents(&z))?;
        let preds = clf.predict(&decoded.iter().collect::<Vec<_>>())?;
        for k in 0..bsz {
            if frozen[k].is_none() && preds[k] == desired[k] {
                frozen[k] = Some(it);
            }
        }
        if frozen.iter().all(Option::is_some) {
            break;
        }
        let weights: Vec<f64> = frozen.iter().map(|f| if f.is_none() { 1.0 } else { 0.0 }).collect();
        let draws: Vec<GumbelNoise> = ids.iter().map(|&i| noise(i, it)).collect();
        let ctx = Ctx::eval(&vae.params);
        let zv = ctx.tape.leaf(z.clone());
        let (total, logp, norms) = cf_loss_vars(&ctx, vae, clf, zv, desired, &weights, config.lambda, &draws, config.tau)?;
        let grads = ctx.tape.backward(total);
        let grad = grads.get(zv).cloned().unwrap_or_else(|| Tensor::zeros(z.raw_dim()));
        if grad.iter().any(|g| !g.is_finite()) || !ctx.tape.scalar_value(total).is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite counterfactual gradient at iteration {it} for factuals {ids:?}"
            )));
        }
        let (lp, nv) = (ctx.tape.value(logp), ctx.tape.value(norms));
        for k in 0..bsz {
            if frozen[k].is_none() {
                losses[k].push(-lp[[k, desired[k]]] + config.lambda * nv[k]);
                norms_seen[k].push(nv[k]);
            }
        }
        let before = z.clone();
        match config.optimizer {
            CfOptimizer::Adam => {
                adam.tick();
                adam.step_tensor(0, &mut z, &grad);
            }
            CfOptimizer::Sgd => z.scaled_add(-config.epsilon, &grad),
        }
        // frozen latents keep their value despite the optimiser momentum
        for k in 0..bsz {
            if frozen[k].is_some() {
                z.index_axis_mut(Axis(0), k).assign(&before.index_axis(Axis(0), k));
            }
        }
        updates += 1;
    }
    let z_final = unstack_latents(&z);
    let counterfactuals = vae.decode_mode(&z_final)?;
    let preds = clf.predict(&counterfactuals.iter().collect::<Vec<_>>())?;
    Ok(counterfactuals
        .into_iter()
        .enumerate()
        .map(|(k, cf)| CounterfactualResult {
            index: ids[k],
            method: Method::Cgcf,
            factual: factuals[k].clone(),
            factual_label: factual_labels[k],
            desired_label: desired[k],
            counterfactual: cf,
            predicted_label: preds[k],
            flipped: preds[k] == desired[k],
            iterations_used: frozen[k].unwrap_or(updates),
            z_factual: z0[k].clone(),
            z_counterfactual: z_final[k].clone(),
            loss_trajectory: std::mem::take(&mut losses[k]),
            z_norm_trajectory: std::mem::take(&mut norms_seen[k]),
            source_index: None,
        })
        .collect())
}

fn assemble(
    method: Method,
    clf: &Classifier,
    factuals: &[&DenseGraph],
    desired: &[usize],
    z_factual: Vec<LatentCode>,
    picks: Vec<(DenseGraph, LatentCode, Option<usize>)>,
) -> Result<Vec<CounterfactualResult>> {
    let factual_labels = clf.predict(factuals)?;
    let preds = clf.predict(&picks.iter().map(|p| &p.0).collect::<Vec<_>>())?;
    Ok(picks
        .into_iter()
        .zip(z_factual)
        .enumerate()
        .map(|(k, ((cf, zc, source), zf))| CounterfactualResult {
            index: k,
            method,
            factual: factuals[k].clone(),
            factual_label: factual_labels[k],
            desired_label: desired[k],
            counterfactual: cf,
            predicted_label: preds[k],
            flipped: preds[k] == desired[k],
            iterations_used: 0,
            z_factual: zf,
            z_counterfactual: zc,
            loss_trajectory: Vec::new(),
            z_norm_trajectory: Vec::new(),
            source_index: source,
        })
        .collect())
}

fn posterior_means(vae: &PegVae, graphs: &[&DenseGraph]) -> Result<Vec<LatentCode>> {
    Ok(vae.encode(graphs)?.into_iter().map(|p| p.mean).collect())
}

/// Decodes one prior sample per factual; sample `k` uses a seed derived
/// from `(seed, k)`.
pub fn baseline_random(
    vae: &PegVae,
    clf: &Classifier,
    factuals: &[&DenseGraph],
    desired: &[usize],
    seed: u64,
) -> Result<Vec<CounterfactualResult>> {
    check_models(vae, clf, factuals, desired)?;
    let shape = (vae.dims.n, vae.latent_dim());
    let zs: Vec<LatentCode> = (0..factuals.len())
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, k as u64]));
            LatentCode::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng))
        })
        .collect();
    let graphs = vae.decode_mode(&zs)?;
    let picks = graphs.into_iter().zip(zs).map(|(g, z)| (g, z, None)).collect();
    assemble(Method::Random, clf, factuals, desired, posterior_means(vae, factuals)?, picks)
}

/// Posterior means of the training graphs with their dataset labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentIndex {
    pub latents: Vec<LatentCode>,
    pub labels: Vec<usize>,
}

impl LatentIndex {
    pub fn build(vae: &PegVae, train: &GraphCollection) -> Result<Self> {
        Ok(Self {
            latents: posterior_means(vae, &train.graph_refs())?,
            labels: train.labels.clone(),
        })
    }

    /// The `k` latents with `label` closest to `z` in Euclidean distance,
    /// nearest first; ties go to the lower index.
    pub fn nearest(&self, z: &LatentCode, label: usize, k: usize) -> Result<Vec<usize>> {
        let mut cands: Vec<(f64, usize)> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| {
                if self.latents[i].dim() != z.dim() {
                    return Err(Error::SizeMismatch(format!("latent {:?} vs {:?}", self.latents[i].dim(), z.dim())));
                }
                Ok(((&self.latents[i] - z).mapv(|x| x * x).sum().sqrt(), i))
            })
            .collect::<Result<_>>()?;
        if cands.len() < k {
            return Err(Error::InvalidArgument(format!(
                "{} training graphs with label {label}, {k} needed",
                cands.len()
            )));
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(cands.into_iter().take(k).map(|(_, i)| i).collect())
    }
}

/// Returns the training graph with the desired dataset label whose
/// posterior mean is nearest to the factual's.
pub fn baseline_nn_train(
    vae: &PegVae,
    clf: &Classifier,
    index: &LatentIndex,
    train: &GraphCollection,
    factuals: &[&DenseGraph],
    desired: &[usize],
) -> Result<Vec<CounterfactualResult>> {
    check_models(vae, clf, factuals, desired)?;
    if index.latents.len() != train.len() {
        return mismatch(format!("{} cached latents for {} training graphs", index.latents.len(), train.len()));
    }
    let zf = posterior_means(vae, factuals)?;
    let picks = zf
        .iter()
        .zip(desired)
        .map(|(z, &y)| {
            let i = index.nearest(z, y, 1)?[0];
            Ok((train.graphs[i].clone(), index.latents[i].clone(), Some(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(Method::Nn, clf, factuals, desired, zf, picks)
}

/// Decodes the mean of the `k` nearest desired-label training latents.
pub fn baseline_knn_mean(
    vae: &PegVae,
    clf: &Classifier,
    index: &LatentIndex,
    factuals: &[&DenseGraph],
    desired: &[usize],
    k: usize,
) -> Result<Vec<CounterfactualResult>> {
    check_models(vae, clf, factuals, desired)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let zf = posterior_means(vae, factuals)?;
    let means = zf
        .iter()
        .zip(desired)
        .map(|(z, &y)| {
            let near = index.nearest(z, y, k)?;
            let mut m = LatentCode::zeros(z.raw_dim());
            for &i in &near {
                m += &index.latents[i];
            }
            Ok(m / k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let graphs = vae.decode_mode(&means)?;
    let picks = graphs.into_iter().zip(means).map(|(g, z)| (g, z, None)).collect();
    assemble(Method::KnnMean, clf, factuals, desired, zf, picks)
}

/// Every returned counterfactual must satisfy the graph invariants.
pub fn check_results(results: &[CounterfactualResult]) -> Result<()> {
    for r in results {
        let report = validate(&r.counterfactual);
        if !report.is_valid() {
            return Err(Error::InvalidArgument(format!("counterfactual {} is invalid: {report:?}", r.index)));
        }
    }
    Ok(())
}
