//! The stages behind the command line: each reads its inputs from the run
//! directory, checks they exist, and writes its artifacts next to them.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgcf::{
    baseline_knn_mean, baseline_nn_train, baseline_random, check_results, default_desired, generate_cgcf,
    CounterfactualRecord, CounterfactualResult, LatentIndex, Method,
};
use crate::checkpoint::{read_jsonl, write_jsonl, Checkpoint};
use crate::classifier::{evaluate_auroc, train_classifier, Classifier};
use crate::config::ExperimentConfig;
use crate::dataset::{
    dataset_stats, filter_dataset, generate_synthetic, load_tudataset, make_collection, split, DatasetStats, Snapshot,
    SNAPSHOT_VERSION,
};
use crate::error::{Error, Result};
use crate::graph::{DenseGraph, GraphRecord};
use crate::metrics::{
    format_table, paired_scores, sample_metrics, summarize, tradeoff_curve, IdentityMetric, MethodSummary,
    SampleMetrics, TradeoffCurve, ValidityMetric,
};
use crate::vae::{train_pegvae, ElboTerms, PegVae};

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn dataset_stats(&self) -> PathBuf {
        self.root.join("dataset_stats.json")
    }
    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier.json")
    }
    pub fn classifier_history(&self) -> PathBuf {
        self.root.join("classifier_history.jsonl")
    }
    pub fn classifier_metrics(&self) -> PathBuf {
        self.root.join("classifier_metrics.json")
    }
    pub fn vae(&self) -> PathBuf {
        self.root.join("vae.json")
    }
    pub fn vae_history(&self) -> PathBuf {
        self.root.join("vae_history.jsonl")
    }
    pub fn vae_metrics(&self) -> PathBuf {
        self.root.join("vae_metrics.json")
    }
    pub fn results(&self, m: Method) -> PathBuf {
        self.root.join(format!("results_{}.jsonl", m.as_str()))
    }
    pub fn samples(&self, m: Method) -> PathBuf {
        self.root.join(format!("samples_{}.jsonl", m.as_str()))
    }
    pub fn table(&self) -> PathBuf {
        self.root.join("table.tsv")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn curves(&self) -> PathBuf {
        self.root.join("curves")
    }
    pub fn tradeoff_plot(&self) -> PathBuf {
        self.root.join("tradeoff.svg")
    }
    pub fn ged_histogram(&self) -> PathBuf {
        self.root.join("ged_histogram.svg")
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{} not found; run `graphcf {stage}` first",
            path.display()
        )))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn check_hash(found: Option<&str>, cfg: &ExperimentConfig, what: &Path) {
    let want = cfg.hash();
    if let Some(h) = found.filter(|h| *h != want) {
        warn!("{} was written under config {h}, current config is {want}", what.display());
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.out_dir);
    fs::create_dir_all(&paths.root)?;
    fs::write(paths.config(), cfg.to_toml()?)?;
    Ok(paths)
}

fn load_snapshot(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<Snapshot> {
    require(&paths.dataset(), "ingest")?;
    let snap = Snapshot::load(&paths.dataset())?;
    check_hash(Some(&snap.config_hash), cfg, &paths.dataset());
    Ok(snap)
}

pub fn load_classifier(paths: &RunPaths) -> Result<Classifier> {
    require(&paths.classifier(), "train-classifier")?;
    Classifier::from_checkpoint(Checkpoint::load(&paths.classifier())?)
}

pub fn load_vae(paths: &RunPaths) -> Result<PegVae> {
    require(&paths.vae(), "train-vae")?;
    PegVae::from_checkpoint(Checkpoint::load(&paths.vae())?)
}

/// Loads or generates the dataset, filters it, splits it and writes the
/// snapshot and its statistics.
pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<DatasetStats> {
    let paths = prepare(cfg)?;
    let ds = &cfg.dataset;
    let (collection, node_classes, edge_classes, min_freq) = if ds.is_synthetic() {
        (generate_synthetic(ds.synthetic_graphs, ds.max_nodes, cfg.seed)?, None, None, None)
    } else {
        let dir = ds.data_dir()?;
        let raw = load_tudataset(&dir, &ds.name)?;
        let filtered = filter_dataset(&raw, ds.max_nodes, ds.min_node_label_freq)?;
        info!("{}: {} of {} graphs kept", ds.name, filtered.graphs.len(), raw.graphs.len());
        let coll = make_collection(&filtered)?;
        (coll, Some(filtered.node_classes), filtered.edge_classes, Some(ds.min_node_label_freq))
    };
    let spec = cfg.split_spec();
    let parts = split(&collection, &spec)?;
    let stats = dataset_stats(&collection, &parts);
    let snap = Snapshot {
        format_version: SNAPSHOT_VERSION,
        name: collection.name.clone(),
        dims: collection.dims,
        max_nodes: ds.max_nodes,
        min_node_label_freq: min_freq,
        node_classes,
        edge_classes,
        graphs: collection.graphs.iter().map(GraphRecord::from_graph).collect(),
        labels: collection.labels.clone(),
        split: parts,
        split_spec: spec,
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    snap.save(&paths.dataset())?;
    write_json(&paths.dataset_stats(), &stats)?;
    info!("wrote {} ({} graphs)", paths.dataset().display(), stats.graphs);
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub val_auroc: f64,
    pub test_auroc: f64,
}

pub fn cmd_train_classifier(cfg: &ExperimentConfig) -> Result<ClassifierMetrics> {
    let paths = prepare(cfg)?;
    let snap = load_snapshot(&paths, cfg)?;
    let (train, val, test) = snap.parts()?;
    let (model, history) = train_classifier(&train, &val, &cfg.classifier)?;
    let metrics = ClassifierMetrics {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        epochs: history.len(),
        val_auroc: evaluate_auroc(&model, &val)?,
        test_auroc: evaluate_auroc(&model, &test)?,
    };
    let mut ckpt = model.to_checkpoint();
    ckpt.config_hash = Some(metrics.config_hash.clone());
    ckpt.save(&paths.classifier())?;
    write_jsonl(&paths.classifier_history(), &history)?;
    write_json(&paths.classifier_metrics(), &metrics)?;
    info!("classifier: val AUROC {:.4}, test AUROC {:.4}", metrics.val_auroc, metrics.test_auroc);
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub beta: f64,
    pub test: ElboTerms,
    /// Test graphs whose mode reconstruction has the right node count.
    pub node_count_matches: usize,
    pub exact_reconstructions: usize,
    pub test_graphs: usize,
}

pub fn cmd_train_vae(cfg: &ExperimentConfig) -> Result<VaeMetrics> {
    let paths = prepare(cfg)?;
    let snap = load_snapshot(&paths, cfg)?;
    let (train, val, test) = snap.parts()?;
    let (model, history) = train_pegvae(&train, &val, &cfg.vae)?;
    let refs = test.graph_refs();
    let test_terms = model.evaluate_elbo(&refs, cfg.vae.beta, cfg.seed)?;
    let means: Vec<_> = model.encode(&refs)?.into_iter().map(|p| p.mean).collect();
    let recon = model.decode_mode(&means)?;
    let metrics = VaeMetrics {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        epochs: history.len(),
        beta: cfg.vae.beta,
        test: test_terms,
        node_count_matches: recon.iter().zip(&refs).filter(|(r, g)| r.num_nodes() == g.num_nodes()).count(),
        exact_reconstructions: recon.iter().zip(&refs).filter(|(r, g)| r == *g).count(),
        test_graphs: refs.len(),
    };
    let mut ckpt = model.to_checkpoint();
    ckpt.config_hash = Some(metrics.config_hash.clone());
    ckpt.save(&paths.vae())?;
    write_jsonl(&paths.vae_history(), &history)?;
    write_json(&paths.vae_metrics(), &metrics)?;
    info!(
        "VAE: test ELBO {:.3} (recon {:.3}, KL {:.3})",
        metrics.test.total, metrics.test.recon_nll, metrics.test.kl
    );
    Ok(metrics)
}

/// Counterfactuals of one method for every test graph, with
/// `desired = 1 - prediction`.
pub fn run_method(
    method: Method,
    cfg: &ExperimentConfig,
    vae: &PegVae,
    clf: &Classifier,
    snap: &Snapshot,
) -> Result<Vec<CounterfactualResult>> {
    let (train, _, test) = snap.parts()?;
    let factuals: Vec<&DenseGraph> = test.graph_refs();
    let desired = default_desired(clf, &factuals)?;
    let results = match method {
        Method::Cgcf => generate_cgcf(vae, clf, &factuals, &desired, &cfg.cf)?,
        Method::Random => baseline_random(vae, clf, &factuals, &desired, cfg.seed)?,
        Method::Nn => baseline_nn_train(vae, clf, &LatentIndex::build(vae, &train)?, &train, &factuals, &desired)?,
        Method::KnnMean => {
            baseline_knn_mean(vae, clf, &LatentIndex::build(vae, &train)?, &factuals, &desired, cfg.cf.k_nn)?
        }
    };
    check_results(&results)?;
    Ok(results)
}

/// Runs each method on the test split and writes `results_<method>.jsonl`.
/// Returns the flip ratio per method.
pub fn cmd_generate(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<(Method, f64)>> {
    let paths = prepare(cfg)?;
    let snap = load_snapshot(&paths, cfg)?;
    let clf = load_classifier(&paths)?;
    let vae = load_vae(&paths)?;
    if clf.dims != snap.dims || vae.dims != snap.dims {
        return Err(Error::SizeMismatch("checkpoints were trained on a different dataset".into()));
    }
    let hash = cfg.hash();
    let mut out = Vec::new();
    for &m in methods {
        let results = run_method(m, cfg, &vae, &clf, &snap)?;
        let records: Vec<CounterfactualRecord> = results
            .iter()
            .map(|r| CounterfactualRecord::from_result(r, &hash, cfg.seed))
            .collect();
        write_jsonl(&paths.results(m), &records)?;
        let fr = results.iter().filter(|r| r.flipped).count() as f64 / results.len().max(1) as f64;
        info!("{}: flip ratio {fr:.3} over {} graphs", m.display_name(), results.len());
        out.push((m, fr));
    }
    Ok(out)
}

pub fn load_results(paths: &RunPaths, m: Method) -> Result<Vec<CounterfactualResult>> {
    require(&paths.results(m), "generate")?;
    read_jsonl::<CounterfactualRecord>(&paths.results(m))?
        .iter()
        .map(CounterfactualRecord::to_result)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub method: Method,
    pub identity: IdentityMetric,
    pub validity: ValidityMetric,
    pub curve: TradeoffCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub config_hash: String,
    pub rows: Vec<MethodSummary>,
    pub curves: Vec<CurveRecord>,
}

/// Computes per-sample metrics, the aggregate table and the trade-off
/// curves of every configured method, and draws the figures.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<EvaluationSummary> {
    let paths = prepare(cfg)?;
    let snap = load_snapshot(&paths, cfg)?;
    let clf = load_classifier(&paths)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut per_method: Vec<(Method, Vec<SampleMetrics>)> = Vec::new();
    fs::create_dir_all(paths.curves())?;
    for &m in &cfg.evaluate.methods {
        let results = load_results(&paths, m)?;
        let samples = sample_metrics(&clf, &results)?;
        write_jsonl(&paths.samples(m), &samples)?;
        rows.push(summarize(&snap.name, m, &samples)?);
        for id in IdentityMetric::ALL {
            for val in ValidityMetric::ALL {
                let (xs, ys) = paired_scores(&samples, id, val);
                let curve = tradeoff_curve(&xs, &ys, cfg.evaluate.min_count)?;
                let file = paths.curves().join(format!("{}_{}_{}.tsv", m.as_str(), slug(id.label()), slug(val.label())));
                let mut tsv = String::from("threshold\tmean_validity\tcount\n");
                for k in 0..curve.thresholds.len() {
                    tsv.push_str(&format!("{}\t{}\t{}\n", curve.thresholds[k], curve.mean_validity[k], curve.counts[k]));
                }
                fs::write(file, tsv)?;
                curves.push(CurveRecord {
                    method: m,
                    identity: id,
                    validity: val,
                    curve,
                });
            }
        }
        per_method.push((m, samples));
    }
    fs::write(paths.table(), format_table(&rows))?;
    let summary = EvaluationSummary {
        config_hash: cfg.hash(),
        rows,
        curves,
    };
    write_json(&paths.summary(), &summary)?;
    plot_tradeoffs(&paths.tradeoff_plot(), &summary.curves, &cfg.evaluate.methods)?;
    plot_ged_histograms(&paths.ged_histogram(), &per_method)?;
    info!("wrote {} and {}", paths.table().display(), paths.tradeoff_plot().display());
    Ok(summary)
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase().replace(' ', "_")
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Grid of trade-off curves: validity metrics down, identity metrics across,
/// one line per method.
pub fn plot_tradeoffs(path: &Path, curves: &[CurveRecord], methods: &[Method]) -> Result<()> {
    let root = SVGBackend::new(path, (1200, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let cells = root.split_evenly((ValidityMetric::ALL.len(), IdentityMetric::ALL.len()));
    for (r, val) in ValidityMetric::ALL.iter().enumerate() {
        for (c, id) in IdentityMetric::ALL.iter().enumerate() {
            let cell = &cells[r * IdentityMetric::ALL.len() + c];
            let chosen: Vec<&CurveRecord> = curves
                .iter()
                .filter(|k| k.identity == *id && k.validity == *val && !k.curve.thresholds.is_empty())
                .collect();
            let xs = chosen.iter().flat_map(|k| k.curve.thresholds.iter().copied());
            let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !x0.is_finite() {
                (x0, x1) = (0.0, 1.0);
            }
            if x1 - x0 < 1e-9 {
                x1 = x0 + 1.0;
            }
            let (y0, y1) = match val {
                ValidityMetric::Sic => (-1.0, 1.0),
                ValidityMetric::Flip => (0.0, 1.0),
            };
            let mut chart = ChartBuilder::on(cell)
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(45)
                .build_cartesian_2d(x0..x1, y0..y1)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc(id.label())
                .y_desc(val.label())
                .draw()
                .map_err(plot_err)?;
            for k in chosen {
                let color = Palette99::pick(methods.iter().position(|m| *m == k.method).unwrap_or(0));
                let pts: Vec<(f64, f64)> = k.curve.thresholds.iter().copied().zip(k.curve.mean_validity.iter().copied()).collect();
                let style = color.stroke_width(2);
                chart
                    .draw_series(LineSeries::new(pts, style))
                    .map_err(plot_err)?
                    .label(k.method.display_name())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], style));
            }
            if r == 0 && c == 0 {
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.8))
                    .border_style(BLACK)
                    .draw()
                    .map_err(plot_err)?;
            }
        }
    }
    root.present().map_err(plot_err)
}

/// One GED histogram per method.
pub fn plot_ged_histograms(path: &Path, per_method: &[(Method, Vec<SampleMetrics>)]) -> Result<()> {
    let root = SVGBackend::new(path, (300 * per_method.len().max(1) as u32, 300)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let cells = root.split_evenly((1, per_method.len().max(1)));
    let top = per_method.iter().flat_map(|(_, s)| s.iter().map(|x| x.ged)).max().unwrap_or(0) as u32 + 1;
    for ((m, samples), cell) in per_method.iter().zip(&cells) {
        let mut counts = vec![0u32; top as usize];
        for s in samples {
            counts[s.ged] += 1;
        }
        let ymax = counts.iter().copied().max().unwrap_or(0) + 1;
        let mut chart = ChartBuilder::on(cell)
            .caption(m.display_name(), ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(30)
            .y_label_area_size(35)
            .build_cartesian_2d((0u32..top).into_segmented(), 0u32..ymax)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("GED").y_desc("count").draw().map_err(plot_err)?;
        chart
            .draw_series(
                Histogram::vertical(&chart)
                    .style(BLUE.mix(0.6).filled())
                    .data(samples.iter().map(|s| (s.ged as u32, 1u32))),
            )
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    #[test]
    fn stages_fail_fast_without_their_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::profile(Profile::Synthetic);
        cfg.out_dir = dir.path().to_path_buf();
        let err = cmd_train_vae(&cfg).unwrap_err().to_string();
        assert!(err.contains("graphcf ingest"), "{err}");
        cmd_ingest(&cfg).unwrap();
        let err = cmd_generate(&cfg, &[Method::Cgcf]).unwrap_err().to_string();
        assert!(err.contains("train-classifier"), "{err}");
        let err = cmd_evaluate(&cfg).unwrap_err().to_string();
        assert!(err.contains("train-classifier"), "{err}");
    }
}
