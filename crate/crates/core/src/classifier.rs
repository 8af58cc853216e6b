//! Permutation-invariant graph classifier: equivariant trunk, max pooling
//! over existing nodes, and a one-hidden-layer head with two logits.

use ndarray::IxDyn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::dataset::GraphCollection;
use crate::error::{Error, Result};
use crate::graph::{DenseGraph, GraphDims};
use crate::model::{GraphInput, Trunk};
use crate::nn::{apply_norm_updates, Adam, Ctx, Dense, ParamStore};

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub channels: usize,
    pub hidden: usize,
    pub norm_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            channels: 20,
            hidden: 200,
            norm_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!("classifier settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Trained or freshly initialised classifier.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub dims: GraphDims,
    pub config: TrainConfig,
    trunk: Trunk,
    hidden: Dense,
    out: Dense,
    pub params: ParamStore,
}

const PREDICT_CHUNK: usize = 256;

impl Classifier {
    pub fn new(dims: GraphDims, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let trunk = Trunk::new(&mut params, "clf.trunk", dims, config.channels, &mut rng);
        let hidden = Dense::new(&mut params, "clf.hidden", config.channels, config.hidden, &mut rng);
        let out = Dense::new(&mut params, "clf.out", config.hidden, 2, &mut rng);
        Self {
            dims,
            config: config.clone(),
            trunk,
            hidden,
            out,
            params,
        }
    }

    /// Graph embedding `(batch, channels)`: channel-wise maximum of the
    /// trunk features over existing nodes (zeros for a graph without nodes).
    pub fn embed(&self, ctx: &Ctx, input: &GraphInput) -> Result<Var> {
        input.check(&ctx.tape, self.dims)?;
        let h = self.trunk.forward(ctx, input)?;
        Ok(ctx.tape.max_pool_nodes(h, std::rc::Rc::clone(&input.mask.existing)))
    }

    /// Logits `(batch, 2)` and embeddings. Accepts relaxed tensors.
    pub fn forward(&self, ctx: &Ctx, input: &GraphInput) -> Result<(Var, Var)> {
        let emb = self.embed(ctx, input)?;
        let h = ctx.tape.relu(self.hidden.forward(ctx, emb));
        Ok((self.out.forward(ctx, h), emb))
    }

    fn eval_chunks<T>(&self, graphs: &[&DenseGraph], f: impl Fn(&Ctx, &GraphInput) -> Result<Vec<T>>) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(PREDICT_CHUNK) {
            let ctx = Ctx::eval(&self.params);
            let input = GraphInput::from_graphs(&ctx.tape, chunk)?;
            out.extend(f(&ctx, &input)?);
        }
        Ok(out)
    }

    /// Class probabilities `[p0, p1]` per graph (evaluation mode).
    pub fn predict_proba(&self, graphs: &[&DenseGraph]) -> Result<Vec<[f64; 2]>> {
        self.eval_chunks(graphs, |ctx, input| {
            let (logits, _) = self.forward(ctx, input)?;
            let p = ctx.tape.value(ctx.tape.softmax_last(logits));
            Ok((0..input.batch()).map(|k| [p[[k, 0]], p[[k, 1]]]).collect())
        })
    }

    pub fn predict(&self, graphs: &[&DenseGraph]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(graphs)?.iter().map(|p| usize::from(p[1] > p[0])).collect())
    }

    pub fn embeddings(&self, graphs: &[&DenseGraph]) -> Result<Vec<Vec<f64>>> {
        self.eval_chunks(graphs, |ctx, input| {
            let e = ctx.tape.value(self.embed(ctx, input)?);
            Ok(e.outer_iter().map(|row| row.iter().copied().collect()).collect())
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint<TrainConfig> {
        Checkpoint::new("classifier", self.dims, self.config.clone(), self.config.seed, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: Checkpoint<TrainConfig>) -> Result<Self> {
        ckpt.expect_kind("classifier")?;
        let mut model = Self::new(ckpt.dims, &ckpt.config);
        if !model.params.same_layout(&ckpt.params) {
            return Err(Error::Checkpoint("classifier parameter layout does not match its configuration".into()));
        }
        model.params = ckpt.params;
        Ok(model)
    }
}

/// Mean cross-entropy of `logits (batch, 2)` against `labels`.
pub fn cross_entropy(ctx: &Ctx, logits: Var, labels: &[usize]) -> Var {
    let tape = &ctx.tape;
    let bsz = labels.len();
    let mut target = Tensor::zeros(IxDyn(&[bsz, 2]));
    for (k, &l) in labels.iter().enumerate() {
        target[[k, l]] = -1.0 / bsz as f64;
    }
    tape.sum(tape.mul_const(tape.log_softmax_last(logits), &target))
}

/// Area under the ROC curve of `scores` for the positive class, with tied
/// scores counted as half (Mann–Whitney statistic).
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::SizeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let avg_rank = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += order[k..=end].iter().filter(|&&i| labels[i] == 1).count() as f64 * avg_rank;
        k = end + 1;
    }
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

pub fn evaluate_auroc(model: &Classifier, collection: &GraphCollection) -> Result<f64> {
    if collection.is_empty() {
        return Err(Error::EmptyDataset(collection.name.clone()));
    }
    let probs = model.predict_proba(&collection.graph_refs())?;
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    auroc(&scores, &collection.labels)
}

/// Mean cross-entropy over a collection in evaluation mode.
pub fn evaluate_loss(model: &Classifier, collection: &GraphCollection) -> Result<f64> {
    let probs = model.predict_proba(&collection.graph_refs())?;
    let total: f64 = probs
        .iter()
        .zip(&collection.labels)
        .map(|(p, &l)| -p[l].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / collection.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
}

/// Adam on mean cross-entropy; returns the parameters of the epoch with
/// the best validation AUROC (lowest validation loss if the validation set
/// has a single class) and the per-epoch history.
pub fn train_classifier(
    train: &GraphCollection,
    val: &GraphCollection,
    config: &TrainConfig,
) -> Result<(Classifier, Vec<ClassifierEpoch>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset(format!("{} (training part)", train.name)));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset(format!("{} (validation part)", val.name)));
    }
    if train.dims != val.dims {
        return Err(Error::SizeMismatch(format!("train {:?} vs val {:?}", train.dims, val.dims)));
    }
    let mut model = Classifier::new(train.dims, config);
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let graphs: Vec<&DenseGraph> = batch.iter().map(|&i| &train.graphs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (grads, updates, loss) = {
                let ctx = Ctx::train(&model.params);
                let input = GraphInput::from_graphs(&ctx.tape, &graphs)?;
                let (logits, _) = model.forward(&ctx, &input)?;
                let loss = cross_entropy(&ctx, logits, &labels);
                let value = ctx.tape.scalar_value(loss);
                let mut g = ctx.tape.backward(loss);
                (ctx.param_grads(&mut g), ctx.take_norm_updates(), value)
            };
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("classifier loss {loss} at epoch {epoch}")));
            }
            adam.step(&mut model.params, &grads);
            apply_norm_updates(&mut model.params, &updates, config.norm_momentum);
            loss_sum += loss * batch.len() as f64;
        }
        let val_loss = evaluate_loss(&model, val)?;
        let val_auroc = evaluate_auroc(&model, val).ok();
        let record = ClassifierEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_auroc,
        };
        log::debug!("classifier {record:?}");
        let score = val_auroc.unwrap_or(-val_loss);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model.params.clone()));
        }
        history.push(record);
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::gradcheck::check_ctx_gradients;
    use crate::graph::{apply_permutation, Permutation};
    use crate::nn::NodeMask;
    use rand::Rng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            channels: 6,
            hidden: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn auroc_reference_values() {
        let labels = [0, 0, 1, 1];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auroc_chance_and_monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..4000).map(|_| rng.random()).collect();
        let labels: Vec<usize> = (0..4000).map(|_| rng.random_range(0..2)).collect();
        let a = auroc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.03, "{a}");
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(a, auroc(&warped, &labels).unwrap());
    }

    #[test]
    fn probabilities_are_normalised_and_invariant() {
        let data = generate_synthetic(20, 6, 2).unwrap();
        let model = Classifier::new(data.dims, &small_config());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in &data.graphs {
            let p = model.predict_proba(&[g]).unwrap()[0];
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert!(p[0] > 0.0 && p[1] > 0.0);
            let pg = apply_permutation(g, &Permutation::random(g.n(), &mut rng)).unwrap();
            let q = model.predict_proba(&[&pg]).unwrap()[0];
            assert!((p[1] - q[1]).abs() < 1e-12);
            let (e1, e2) = (model.embeddings(&[g]).unwrap(), model.embeddings(&[&pg]).unwrap());
            for (x, y) in e1[0].iter().zip(&e2[0]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_wrong_dimensions() {
        let data = generate_synthetic(4, 6, 2).unwrap();
        let model = Classifier::new(GraphDims::new(5, 2, None), &small_config());
        assert!(model.predict_proba(&data.graph_refs()).is_err());
    }

    #[test]
    fn relaxed_input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = GraphDims::new(4, 2, Some(2));
        let model = Classifier::new(dims, &small_config());
        let mask = NodeMask::new(4, vec![vec![0, 1, 3]]);
        let rand_t = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(0.05..0.95));
        let mut a = rand_t(&[1, 4, 4, 1], &mut rng);
        for i in 0..4 {
            for j in 0..i {
                a[[0, i, j, 0]] = a[[0, j, i, 0]];
            }
        }
        let inputs = vec![
            rand_t(&[1, 4, 2], &mut rng),
            rand_t(&[1, 4, 2], &mut rng),
            a,
            rand_t(&[1, 4, 4, 2], &mut rng),
        ];
        let report = check_ctx_gradients(&model.params, false, &inputs, 1e-6, |ctx, v| {
            let input = GraphInput {
                b: v[0],
                v: v[1],
                a: v[2],
                e: Some(v[3]),
                mask: mask.clone(),
            };
            let (logits, _) = model.forward(ctx, &input).unwrap();
            cross_entropy(ctx, logits, &[1])
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dims = GraphDims::new(5, 2, None);
        let model = Classifier::new(dims, &small_config());
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let back = Classifier::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params, model.params);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = generate_synthetic(120, 6, 4).unwrap();
        let (train, val) = (data.subset(&(0..90).collect::<Vec<_>>()), data.subset(&(90..120).collect::<Vec<_>>()));
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            ..small_config()
        };
        let (m1, h1) = train_classifier(&train, &val, &cfg).unwrap();
        let (m2, h2) = train_classifier(&train, &val, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1.params, m2.params);
        assert!(h1.last().unwrap().train_loss < h1[0].train_loss);
        let empty = data.subset(&[]);
        assert!(matches!(train_classifier(&empty, &val, &cfg), Err(Error::EmptyDataset(_))));
    }
}
