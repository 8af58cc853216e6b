//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails. Run with `cargo test --release --test acceptance`.
//!
//! `GRAPHCF_CRITERIA=1,7` restricts the run. Criteria 5 and 6 need the
//! AIDS, Mutagenicity and NCI1 benchmark files under `$GRAPHCF_TU_DIR`
//! (one sub-directory per dataset) and are reported as SKIP without them;
//! `GRAPHCF_VAE_EPOCHS` shortens their VAE training.

use std::path::PathBuf;
use std::process::ExitCode;
use std::rc::Rc;
use std::time::Instant;

use graphcf::autodiff::{Tape, Tensor};
use graphcf::cgcf::{
    cf_loss_vars, default_desired, generate_cgcf, generate_cgcf_with_noise, iteration_noise, CfConfig, Method,
};
use graphcf::classifier::{Classifier, TrainConfig};
use graphcf::config::{ExperimentConfig, Profile};
use graphcf::dataset::Snapshot;
use graphcf::equivariant::{bell, enumerate_basis, permute_batched, EquivariantModule, Features, StreamDims};
use graphcf::gradcheck::{check_ctx_gradients, check_gradients, check_param_gradients, compare_with_finite_differences};
use graphcf::graph::{apply_permutation, pad_graph, DenseGraph, GraphDims, Permutation};
use graphcf::metrics::{ged, oracle_min_ged_counterfactual, tradeoff_curve, tradeoff_curve_naive, ORACLE_MAX_EDITS};
use graphcf::nn::{Ctx, NodeMask, ParamStore};
use graphcf::pipeline::{self, RunPaths};
use graphcf::vae::{gumbel_softmax, GumbelNoise, LatentCode, PegVae, VaeConfig};
use ndarray::{Array, Array2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

type Check = std::result::Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Array::from_shape_simple_fn(IxDyn(shape), || StandardNormal.sample(rng))
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

/// Random valid graph: node count, slots, labels and edges all random.
fn random_graph(rng: &mut ChaCha8Rng, dims: GraphDims) -> DenseGraph {
    let m = rng.random_range(1..=dims.n);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..dims.d_v)).collect();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if rng.random_bool(0.4) {
                edges.push((i, j));
            }
        }
    }
    let edge_labels: Option<Vec<usize>> = dims.d_e.map(|d| edges.iter().map(|_| rng.random_range(0..d)).collect());
    let g = pad_graph(&labels, dims.d_v, &edges, edge_labels.as_deref(), dims.d_e, dims.n).unwrap();
    apply_permutation(&g, &Permutation::random(dims.n, rng)).unwrap()
}

fn criterion_1() -> Check {
    let counts: Vec<usize> = [(1, 1), (1, 2), (2, 2)]
        .iter()
        .map(|&(k, l)| enumerate_basis(k, l).map(|b| b.len()))
        .collect::<graphcf::Result<_>>()
        .map_err(err)?;
    let mut ok = counts == [2, 5, 15] && enumerate_basis(2, 1).map_err(err)?.len() == 5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for n in [3, 4] {
        let mask = NodeMask::full(1, n);
        let perms = Permutation::all(n);
        for (k, l) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            let basis = Rc::new(enumerate_basis(k, l).map_err(err)?);
            let shape: Vec<usize> = std::iter::once(1).chain(std::iter::repeat_n(n, k)).chain([1]).collect();
            for p in 0..basis.len() {
                let mut w = Tensor::zeros(IxDyn(&[basis.len(), 1, 1]));
                w[[p, 0, 0]] = 1.0;
                let x = randn(&shape, &mut rng);
                let apply = |x: &Tensor| {
                    let tape = Tape::new();
                    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
                    (*tape.value(tape.equivariant_linear(xv, wv, &basis, &mask, &mask))).clone()
                };
                let y = apply(&x);
                for perm in &perms {
                    let lhs = apply(&permute_batched(&x, k, perm));
                    let rhs = permute_batched(&y, l, perm);
                    worst = worst.max(max_abs_diff(lhs.iter(), rhs.iter()));
                    checked += 1;
                }
            }
        }
    }
    ok &= worst < 1e-12;
    Ok(pass_if(
        ok,
        format!(
            "basis sizes {counts:?} (Bell 2, 5, 15); {checked} element/permutation pairs on n=3,4, max deviation {worst:.1e}"
        ),
    ))
}

fn tiny_models(dims: GraphDims, channels: usize, latent: usize, seed: u64) -> (PegVae, Classifier) {
    let vae = PegVae::new(
        dims,
        &VaeConfig {
            latent_dim: latent,
            channels,
            seed,
            ..VaeConfig::default()
        },
    );
    let clf = Classifier::new(
        dims,
        &TrainConfig {
            channels,
            hidden: 16,
            seed: seed + 1,
            ..TrainConfig::default()
        },
    );
    (vae, clf)
}

fn criterion_2() -> Check {
    let dims = GraphDims::new(6, 3, Some(2));
    let (vae, clf) = tiny_models(dims, 5, 3, 21);
    let cf = CfConfig {
        iterations: 20,
        epsilon: 0.2,
        lambda: 0.1,
        seed: 5,
        chunk_size: 100,
        ..CfConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut enc, mut dec, mut clf_err, mut kl_err, mut cf_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut mismatched_graphs = 0usize;
    for _ in 0..20 {
        let g = random_graph(&mut rng, dims);
        let perms: Vec<Permutation> = (0..100).map(|_| Permutation::random(dims.n, &mut rng)).collect();
        let moved: Vec<DenseGraph> = perms.iter().map(|p| apply_permutation(&g, p).unwrap()).collect();
        let refs: Vec<&DenseGraph> = moved.iter().collect();

        let base = vae.encode(&[&g]).map_err(err)?.remove(0);
        for (p, post) in perms.iter().zip(vae.encode(&refs).map_err(err)?) {
            enc = enc.max(max_abs_diff(p.permute_rows(&base.mean).iter(), post.mean.iter()));
            enc = enc.max(max_abs_diff(p.permute_rows(&base.log_var).iter(), post.log_var.iter()));
        }

        let z: LatentCode = Array2::from_shape_simple_fn((dims.n, 3), || StandardNormal.sample(&mut rng));
        let zs: Vec<LatentCode> = perms.iter().map(|p| p.permute_rows(&z)).collect();
        let base_mode = vae.decode_mode(std::slice::from_ref(&z)).map_err(err)?.remove(0);
        let base_dist = vae.decode_distribution(std::slice::from_ref(&z)).map_err(err)?.remove(0);
        let modes = vae.decode_mode(&zs).map_err(err)?;
        let dists = vae.decode_distribution(&zs).map_err(err)?;
        for ((p, mode), dist) in perms.iter().zip(&modes).zip(&dists) {
            if apply_permutation(&base_mode, p).unwrap() != *mode {
                mismatched_graphs += 1;
            }
            dec = dec.max(max_abs_diff(p.permute_rows(&base_dist.logits_b).iter(), dist.logits_b.iter()));
            dec = dec.max(max_abs_diff(p.permute_rows(&base_dist.logits_v).iter(), dist.logits_v.iter()));
            dec = dec.max(max_abs_diff(p.permute_pairs3(&base_dist.logits_a).iter(), dist.logits_a.iter()));
            if let (Some(a), Some(b)) = (&base_dist.logits_e, &dist.logits_e) {
                dec = dec.max(max_abs_diff(p.permute_pairs3(a).iter(), b.iter()));
            }
        }

        let pb = clf.predict_proba(&[&g]).map_err(err)?[0];
        for q in clf.predict_proba(&refs).map_err(err)? {
            clf_err = clf_err.max(max_abs_diff(&pb, &q));
        }

        let kl = vae.elbo_loss(&g, 0.5, 9).map_err(err)?.kl;
        for h in &moved {
            kl_err = kl_err.max((vae.elbo_loss(h, 0.5, 9).map_err(err)?.kl - kl).abs());
        }

        let desired = default_desired(&clf, &[&g]).map_err(err)?;
        let one = generate_cgcf(&vae, &clf, &[&g], &desired, &cf).map_err(err)?.remove(0);
        let many = generate_cgcf_with_noise(&vae, &clf, &refs, &vec![desired[0]; refs.len()], &cf, &|i, it| {
            iteration_noise(dims, cf.seed, 0, it).permuted(&perms[i])
        })
        .map_err(err)?;
        for (p, r) in perms.iter().zip(&many) {
            if apply_permutation(&one.counterfactual, p).unwrap() != r.counterfactual
                || r.iterations_used != one.iterations_used
            {
                mismatched_graphs += 1;
            }
            cf_err = cf_err.max(max_abs_diff(p.permute_rows(&one.z_counterfactual).iter(), r.z_counterfactual.iter()));
            cf_err = cf_err.max(max_abs_diff(&one.loss_trajectory, &r.loss_trajectory));
        }
    }
    let ok = [enc, dec, clf_err, kl_err, cf_err].iter().all(|&e| e < 1e-5) && kl_err < 1e-6 && mismatched_graphs == 0;
    Ok(pass_if(
        ok,
        format!(
            "20 graphs x 100 permutations: encoder {enc:.1e}, decoder logits {dec:.1e}, classifier {clf_err:.1e}, \
             KL {kl_err:.1e}, CGCF latent/loss {cf_err:.1e}; {mismatched_graphs} discrete mismatches"
        ),
    ))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4;
    let mut worst = Vec::new();

    let mask = NodeMask::new(n, vec![vec![0, 1, 3], vec![0, 1, 2, 3]]);
    let mut lin = 0.0f64;
    for (k, l) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        let basis = Rc::new(enumerate_basis(k, l).map_err(err)?);
        let shape: Vec<usize> = std::iter::once(2).chain(std::iter::repeat_n(n, k)).chain([2]).collect();
        let out: Vec<usize> = std::iter::once(2).chain(std::iter::repeat_n(n, l)).chain([3]).collect();
        let t = randn(&out, &mut rng);
        let x = randn(&shape, &mut rng);
        let w = randn(&[bell(k + l), 2, 3], &mut rng);
        let r = check_gradients(&[x, w], 1e-6, |tape, v| {
            let y = tape.equivariant_linear(v[0], v[1], &basis, &mask, &mask);
            tape.sum(tape.mul_const(tape.square(y), &t))
        });
        lin = lin.max(r.max_rel_error);
    }
    worst.push(("equivariant linear", lin));

    let mut store = ParamStore::new();
    let module = EquivariantModule::new(&mut store, "m", StreamDims::new(2, 3), StreamDims::new(3, 2), &mut rng);
    let node = randn(&[2, n, 2], &mut rng);
    let edge = randn(&[2, n, n, 3], &mut rng);
    let (tn, te) = (randn(&[2, n, 3], &mut rng), randn(&[2, n, n, 2], &mut rng));
    let objective = |ctx: &Ctx, x: Features| {
        let y = module.forward(ctx, x, &mask).unwrap();
        ctx.tape.add(
            ctx.tape.sum(ctx.tape.mul_const(ctx.tape.square(y.node.unwrap()), &tn)),
            ctx.tape.sum(ctx.tape.mul_const(y.edge.unwrap(), &te)),
        )
    };
    let mut module_err = 0.0f64;
    for train in [false, true] {
        let r = check_ctx_gradients(&store, train, &[node.clone(), edge.clone()], 1e-6, |ctx, v| {
            objective(ctx, Features { node: Some(v[0]), edge: Some(v[1]) })
        });
        module_err = module_err.max(r.max_rel_error);
    }
    let r = check_param_gradients(&store, 1e-6, false, |ctx| {
        let x = Features {
            node: Some(ctx.tape.constant(node.clone())),
            edge: Some(ctx.tape.constant(edge.clone())),
        };
        objective(ctx, x)
    });
    module_err = module_err.max(r.max_rel_error);
    worst.push(("module forward", module_err));

    let dims = GraphDims::new(n, 2, Some(2));
    let (mut vae, mut clf) = tiny_models(dims, 3, 3, 31);
    // zero-initialised biases can put pre-activations exactly on a ReLU kink
    for store in [&mut vae.params, &mut clf.params] {
        for e in store.entries.iter_mut().filter(|e| e.trainable) {
            e.value.mapv_inplace(|v| {
                let x: f64 = StandardNormal.sample(&mut rng);
                v + 0.1 * x
            });
        }
    }
    let (vae, clf) = (vae, clf);
    let graphs: Vec<DenseGraph> = (0..2).map(|_| random_graph(&mut rng, dims)).collect();
    let refs: Vec<&DenseGraph> = graphs.iter().collect();
    let eps = randn(&[2, n, 3], &mut rng);
    let r = check_param_gradients(&vae.params, 1e-6, false, |ctx| vae.elbo_vars(ctx, &refs, &eps, 0.7).unwrap().0);
    worst.push(("ELBO", r.max_rel_error));

    let z = randn(&[2, n, 3], &mut rng);
    let noise = [GumbelNoise::sample(dims, 1), GumbelNoise::sample(dims, 2)];
    let eval = |zt: &Tensor, grad: bool| {
        let ctx = Ctx::eval(&vae.params);
        let zv = if grad { ctx.tape.leaf(zt.clone()) } else { ctx.tape.constant(zt.clone()) };
        let (total, _, _) = cf_loss_vars(&ctx, &vae, &clf, zv, &[1, 0], &[1.0, 1.0], 0.7, &noise, 1.0).unwrap();
        let g = grad.then(|| ctx.tape.backward(total).get(zv).cloned().unwrap());
        (ctx.tape.scalar_value(total), g)
    };
    let analytic = eval(&z, true).1.unwrap();
    let r = compare_with_finite_differences(std::slice::from_ref(&z), &[analytic], 1e-6, |v| eval(&v[0], false).0);
    worst.push(("cf_loss", r.max_rel_error));

    let ok = worst.iter().all(|(_, e)| *e < 1e-4);
    let detail = worst
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(pass_if(ok, format!("max relative error (n=4, d_z=3): {detail}")))
}

/// The trained synthetic run shared by criteria 4 and 8.
struct SyntheticRun {
    _dir: tempfile::TempDir,
    paths: RunPaths,
    cfg: ExperimentConfig,
}

fn synthetic_run() -> std::result::Result<SyntheticRun, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = ExperimentConfig::profile(Profile::Synthetic);
    cfg.out_dir = dir.path().to_path_buf();
    pipeline::cmd_ingest(&cfg).map_err(err)?;
    pipeline::cmd_train_classifier(&cfg).map_err(err)?;
    pipeline::cmd_train_vae(&cfg).map_err(err)?;
    Ok(SyntheticRun {
        paths: RunPaths::new(dir.path()),
        _dir: dir,
        cfg,
    })
}

fn criterion_4(run: &SyntheticRun) -> Check {
    let metrics: pipeline::ClassifierMetrics =
        serde_json::from_str(&std::fs::read_to_string(run.paths.classifier_metrics()).map_err(err)?).map_err(err)?;
    let snap = Snapshot::load(&run.paths.dataset()).map_err(err)?;
    let clf = pipeline::load_classifier(&run.paths).map_err(err)?;
    let vae = pipeline::load_vae(&run.paths).map_err(err)?;
    let cgcf = pipeline::run_method(Method::Cgcf, &run.cfg, &vae, &clf, &snap).map_err(err)?;
    let random = pipeline::run_method(Method::Random, &run.cfg, &vae, &clf, &snap).map_err(err)?;
    let nn = pipeline::run_method(Method::Nn, &run.cfg, &vae, &clf, &snap).map_err(err)?;
    let fr = |rs: &[graphcf::cgcf::CounterfactualResult]| rs.iter().filter(|r| r.flipped).count() as f64 / rs.len() as f64;
    let (fr_cgcf, fr_random) = (fr(&cgcf), fr(&random));

    let train_labels: Vec<usize> = snap.split.train.iter().map(|&i| snap.labels[i]).collect();
    let nn_ok = nn
        .iter()
        .filter(|r| r.source_index.is_some_and(|i| train_labels[i] == r.desired_label))
        .count();

    let (mut found, mut beyond, mut violations) = (0usize, 0usize, 0usize);
    let mut ratios = Vec::new();
    for r in cgcf.iter().filter(|r| r.flipped) {
        let d_cf = ged(&r.factual, &r.counterfactual).map_err(err)?;
        let depth = d_cf.min(ORACLE_MAX_EDITS);
        match oracle_min_ged_counterfactual(&r.factual, r.desired_label, &clf, depth).map_err(err)? {
            Some((_, d)) => {
                found += 1;
                if d > d_cf {
                    violations += 1;
                }
                if d_cf > 0 {
                    ratios.push(d as f64 / d_cf as f64);
                }
            }
            // the counterfactual itself lies within the searched depth
            None if d_cf <= ORACLE_MAX_EDITS => violations += 1,
            None => beyond += 1,
        }
    }
    ratios.sort_by(f64::total_cmp);
    let q = |p: f64| ratios.get(((ratios.len() as f64 - 1.0) * p).round() as usize).copied().unwrap_or(f64::NAN);

    let ok = metrics.val_auroc >= 0.95 && fr_cgcf > fr_random && nn_ok == nn.len() && violations == 0;
    Ok(pass_if(
        ok,
        format!(
            "(a) val AUROC {:.3}; (b) flip ratio CGCF {fr_cgcf:.3} vs random {fr_random:.3}; \
             (c) NN label guarantee {nn_ok}/{}; (d) oracle <= CGCF GED on {found} flipped samples, \
             {beyond} beyond depth {ORACLE_MAX_EDITS}, {violations} violations; \
             oracle/CGCF GED ratio min {:.2} median {:.2} max {:.2}",
            metrics.val_auroc,
            nn.len(),
            q(0.0),
            q(0.5),
            q(1.0),
        ),
    ))
}

fn tu_dir() -> Option<PathBuf> {
    std::env::var_os("GRAPHCF_TU_DIR").map(PathBuf::from).filter(|p| p.is_dir())
}

const BENCHMARKS: [(Profile, &str, usize); 3] = [
    (Profile::Aids, "AIDS", 1635),
    (Profile::Mutagenicity, "Mutagenicity", 3935),
    (Profile::Nci1, "NCI1", 3678),
];

fn benchmark_config(profile: Profile, data: &std::path::Path, out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::profile(profile);
    cfg.dataset.path = Some(data.to_path_buf());
    cfg.out_dir = out.to_path_buf();
    if let Some(e) = std::env::var("GRAPHCF_VAE_EPOCHS").ok().and_then(|s| s.parse().ok()) {
        cfg.vae.epochs = e;
    }
    cfg
}

fn skip_without_data() -> Outcome {
    Outcome {
        status: Status::Skip,
        detail: "benchmark files not available; set GRAPHCF_TU_DIR to a directory with AIDS/, Mutagenicity/, NCI1/".into(),
    }
}

fn criterion_5() -> Check {
    let Some(data) = tu_dir() else {
        return Ok(skip_without_data());
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (profile, name, _) in BENCHMARKS {
        let dir = tempfile::tempdir().map_err(err)?;
        let cfg = benchmark_config(profile, &data, dir.path());
        pipeline::cmd_ingest(&cfg).map_err(err)?;
        let cm = pipeline::cmd_train_classifier(&cfg).map_err(err)?;
        pipeline::cmd_train_vae(&cfg).map_err(err)?;
        let frs = pipeline::cmd_generate(&cfg, &Method::ALL).map_err(err)?;
        let summary = pipeline::cmd_evaluate(&cfg).map_err(err)?;
        let fr = |m: Method| frs.iter().find(|(k, _)| *k == m).map(|(_, f)| *f).unwrap_or(f64::NAN);
        let cg = fr(Method::Cgcf);
        let ordering = Method::ALL
            .iter()
            .filter(|&&m| m != Method::Cgcf && !(profile == Profile::Aids && m == Method::KnnMean))
            .all(|&m| cg >= fr(m));
        let ged_of = |m: Method| summary.rows.iter().find(|r| r.method == m).map(|r| r.ged.mean).unwrap_or(f64::NAN);
        let nn_lowest = Method::ALL.iter().all(|&m| ged_of(Method::Nn) <= ged_of(m));
        ok &= ordering && nn_lowest;
        if profile == Profile::Aids {
            ok &= cm.test_auroc >= 0.95 && cg >= 0.90;
        }
        parts.push(format!(
            "{name}: test AUROC {:.3}, FR cgcf {cg:.2} random {:.2} nn {:.2} knn {:.2}, ordering {}, NN lowest GED {}",
            cm.test_auroc,
            fr(Method::Random),
            fr(Method::Nn),
            fr(Method::KnnMean),
            ordering,
            nn_lowest
        ));
    }
    Ok(pass_if(ok, parts.join("; ")))
}

fn criterion_6() -> Check {
    let Some(data) = tu_dir() else {
        return Ok(skip_without_data());
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (profile, name, expected) in BENCHMARKS {
        let dir = tempfile::tempdir().map_err(err)?;
        let stats = pipeline::cmd_ingest(&benchmark_config(profile, &data, dir.path())).map_err(err)?;
        let dev = (stats.graphs as f64 - expected as f64).abs() / expected as f64;
        ok &= dev <= 0.02;
        parts.push(format!("{name} {} (expected {expected}, {:+.2}%)", stats.graphs, 100.0 * dev));
    }
    Ok(pass_if(ok, parts.join(", ")))
}

/// Brute-force curve in exact integer arithmetic: validities are multiples
/// of 1/1024, so sums are exact whatever the order.
fn exact_curve(identity: &[f64], validity_num: &[i64], min_count: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut ts: Vec<f64> = identity.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let (mut th, mut mean, mut count) = (Vec::new(), Vec::new(), Vec::new());
    for t in ts {
        let sel: Vec<usize> = (0..identity.len()).filter(|&i| identity[i] <= t).collect();
        if sel.len() >= min_count {
            let num: i64 = sel.iter().map(|&i| validity_num[i]).sum();
            th.push(t);
            mean.push((num as f64 / 1024.0) / sel.len() as f64);
            count.push(sel.len());
        }
    }
    (th, mean, count)
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trials = 0;
    let mut ok = true;
    for trial in 0..24 {
        let identity: Vec<f64> = (0..1000)
            .map(|_| match trial % 3 {
                0 => f64::from(rng.random_range(0u32..25)),
                1 => rng.random_range(0.0..10.0),
                _ => -f64::from(rng.random_range(0u32..200)) / 100.0,
            })
            .collect();
        let num: Vec<i64> = (0..1000)
            .map(|_| if trial % 2 == 0 { rng.random_range(-1024..=1024) } else { rng.random_range(0..=1) * 1024 })
            .collect();
        let validity: Vec<f64> = num.iter().map(|&v| v as f64 / 1024.0).collect();
        let curve = tradeoff_curve(&identity, &validity, 10).map_err(err)?;
        let (th, mean, count) = exact_curve(&identity, &num, 10);
        ok &= curve.thresholds == th && curve.mean_validity == mean && curve.counts == count;
        ok &= curve == tradeoff_curve_naive(&identity, &validity, 10).map_err(err)?;
        ok &= curve.counts.first().is_none_or(|&c| c >= 10);
        trials += 1;
    }
    // free-form validities against the quadratic reference
    for _ in 0..8 {
        let identity: Vec<f64> = (0..1000).map(|_| f64::from(rng.random_range(0u32..40)) / 4.0).collect();
        let validity: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        ok &= tradeoff_curve(&identity, &validity, 10).map_err(err)?
            == tradeoff_curve_naive(&identity, &validity, 10).map_err(err)?;
        trials += 1;
    }
    Ok(pass_if(
        ok,
        format!("{trials} trials of 1000 paired samples, min_count 10: exact equality with brute force"),
    ))
}

fn near_one_hot_share(logits: &[f64], draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let g = Gumbel::new(0.0, 1.0).unwrap();
    let sharp = (0..draws)
        .filter(|_| {
            let noise: Vec<f64> = logits.iter().map(|_| g.sample(rng)).collect();
            gumbel_softmax(logits, &noise, 0.01).iter().any(|&x| x > 0.99)
        })
        .count();
    sharp as f64 / draws as f64
}

fn criterion_8(run: Option<&SyntheticRun>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = [0.3, -1.0, 1.2, 0.0];
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let probs: Vec<f64> = e.iter().map(|x| x / e.iter().sum::<f64>()).collect();
    let draws = 10_000;
    let g = Gumbel::new(0.0, 1.0).unwrap();
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        let noise: Vec<f64> = (0..4).map(|_| g.sample(&mut rng)).collect();
        let y = gumbel_softmax(&logits, &noise, 1.0);
        let k = (0..4).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        counts[k] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| (c as f64 - draws as f64 * p).powi(2) / (draws as f64 * p))
        .sum();
    let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);

    let separated = [[2.0, -2.0, f64::NAN], [5.0, 0.0, 0.0], [3.0, -1.0, 0.5]];
    let mut sep_share = 1.0f64;
    for l in separated {
        let l: Vec<f64> = l.into_iter().filter(|x| !x.is_nan()).collect();
        sep_share = sep_share.min(near_one_hot_share(&l, draws, &mut rng));
    }
    let close_share = near_one_hot_share(&logits, draws, &mut rng);

    // node existence logits of the trained synthetic decoder on test latents
    let trained = match run {
        Some(run) => {
            let snap = Snapshot::load(&run.paths.dataset()).map_err(err)?;
            let vae = pipeline::load_vae(&run.paths).map_err(err)?;
            let (_, _, test) = snap.parts().map_err(err)?;
            let means: Vec<LatentCode> = vae.encode(&test.graph_refs()).map_err(err)?.into_iter().map(|p| p.mean).collect();
            let mut shares = Vec::new();
            for d in vae.decode_distribution(&means).map_err(err)? {
                for row in d.logits_b.rows() {
                    shares.push(near_one_hot_share(row.as_slice().unwrap(), 200, &mut rng));
                }
            }
            format!(
                ", trained-decoder existence logits {:.3}",
                shares.iter().sum::<f64>() / shares.len() as f64
            )
        }
        None => String::new(),
    };

    let ok = p_value > 0.05 && sep_share >= 0.99;
    Ok(pass_if(
        ok,
        format!(
            "tau=1 chi-square {stat:.2} (p={p_value:.3}, 10000 draws); tau=0.01 share with max > 0.99: \
             separated logits >= {sep_share:.4}{trained}, close logits {logits:?} {close_share:.4} \
             (two equal logits miss with probability tanh(0.01 ln 99 / 2) = 2.3%)"
        ),
    ))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let wanted: Option<Vec<u8>> = std::env::var("GRAPHCF_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |k: u8| wanted.as_ref().is_none_or(|w| w.contains(&k));

    let mut failed = 0;
    let mut report = |k: u8, start: Instant, outcome: Check| {
        let (tag, detail) = match outcome {
            Ok(Outcome { status: Status::Pass, detail }) => ("PASS", detail),
            Ok(Outcome { status: Status::Skip, detail }) => ("SKIP", detail),
            Ok(Outcome { status: Status::Fail, detail }) => {
                failed += 1;
                ("FAIL", detail)
            }
            Err(e) => {
                failed += 1;
                ("FAIL", format!("error: {e}"))
            }
        };
        println!("criterion {k} {tag} [{:.1}s] {detail}", start.elapsed().as_secs_f64());
    };

    let simple: [(u8, fn() -> Check); 5] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (6, criterion_6),
        (7, criterion_7),
    ];
    for (k, f) in simple.into_iter().filter(|(k, _)| want(*k) && *k < 4) {
        report(k, Instant::now(), f());
    }
    let t = Instant::now();
    let run = if want(4) || want(8) { Some(synthetic_run()) } else { None };
    if want(4) {
        let outcome = match &run {
            Some(Ok(r)) => criterion_4(r),
            Some(Err(e)) => Err(e.clone()),
            None => unreachable!(),
        };
        report(4, t, outcome);
    }
    if want(5) {
        report(5, Instant::now(), criterion_5());
    }
    for (k, f) in simple.into_iter().filter(|(k, _)| want(*k) && *k > 4) {
        report(k, Instant::now(), f());
    }
    if want(8) {
        let trained = run.as_ref().and_then(|r| r.as_ref().ok());
        report(8, Instant::now(), criterion_8(trained));
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
