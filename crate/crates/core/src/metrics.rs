//! Identity-preservation and validity metrics, trade-off curves, and an
//! exhaustive minimum-edit counterfactual search for small graphs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cgcf::{CounterfactualResult, Method};
use crate::classifier::Classifier;
use crate::error::{mismatch, Error, Result};
use crate::graph::{DenseGraph, GraphRecord};
use crate::vae::LatentCode;

/// Edit distance under the identity node alignment: node existence flips,
/// label changes of nodes present in both, edge existence flips, and label
/// changes of edges present in both.
pub fn ged(g1: &DenseGraph, g2: &DenseGraph) -> Result<usize> {
    if g1.dims() != g2.dims() {
        return mismatch(format!("{:?} vs {:?}", g1.dims(), g2.dims()));
    }
    let n = g1.n();
    let mut d = 0;
    for i in 0..n {
        match (g1.node_label(i), g2.node_label(i)) {
            (Some(a), Some(b)) => d += usize::from(a != b),
            (None, None) => {}
            _ => d += 1,
        }
        for j in i + 1..n {
            match (g1.has_edge(i, j), g2.has_edge(i, j)) {
                (true, true) => d += usize::from(g1.edge_label(i, j) != g2.edge_label(i, j)),
                (false, false) => {}
                _ => d += 1,
            }
        }
    }
    Ok(d)
}

/// Euclidean distance over all latent entries.
pub fn led(z1: &LatentCode, z2: &LatentCode) -> Result<f64> {
    if z1.dim() != z2.dim() {
        return mismatch(format!("latent shapes {:?} vs {:?}", z1.dim(), z2.dim()));
    }
    Ok(z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

pub fn cosine_similarity(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return mismatch(format!("embedding lengths {} vs {}", e1.len(), e2.len()));
    }
    let norm = |e: &[f64]| e.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (n1, n2) = (norm(e1), norm(e2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = e1.iter().zip(e2).map(|(a, b)| a * b).sum();
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Signed increase in confidence for the desired class.
pub fn sic(p_desired_cf: f64, p_desired_f: f64) -> Result<f64> {
    for p in [p_desired_cf, p_desired_f] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
    }
    Ok(p_desired_cf - p_desired_f)
}

pub fn flip_ratio(results: &[CounterfactualResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyDataset("no counterfactuals".into()));
    }
    Ok(results.iter().filter(|r| r.flipped).count() as f64 / results.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        Some(Self {
            mean: m,
            std: v.sqrt(),
            count: xs.len(),
        })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Metrics of one counterfactual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub ged: usize,
    pub led: f64,
    /// `None` when either classifier embedding is the zero vector.
    pub cosine_similarity: Option<f64>,
    pub sic: f64,
    pub flipped: bool,
}

/// Per-sample metrics; embeddings and probabilities come from `clf`.
pub fn sample_metrics(clf: &Classifier, results: &[CounterfactualResult]) -> Result<Vec<SampleMetrics>> {
    let factuals: Vec<&DenseGraph> = results.iter().map(|r| &r.factual).collect();
    let cfs: Vec<&DenseGraph> = results.iter().map(|r| &r.counterfactual).collect();
    let (pf, pc) = (clf.predict_proba(&factuals)?, clf.predict_proba(&cfs)?);
    let (ef, ec) = (clf.embeddings(&factuals)?, clf.embeddings(&cfs)?);
    results
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let y = r.desired_label;
            Ok(SampleMetrics {
                index: r.index,
                ged: ged(&r.factual, &r.counterfactual)?,
                led: led(&r.z_factual, &r.z_counterfactual)?,
                cosine_similarity: cosine_similarity(&ef[k], &ec[k]).ok(),
                sic: sic(pc[k][y], pf[k][y])?,
                flipped: r.flipped,
            })
        })
        .collect()
}

/// One row of the aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub dataset: String,
    pub method: Method,
    pub samples: usize,
    pub ged: MeanStd,
    pub led: MeanStd,
    /// `None` if no sample has a defined cosine similarity.
    pub cosine_similarity: Option<MeanStd>,
    pub sic: MeanStd,
    pub flip_ratio: f64,
}

pub fn summarize(dataset: &str, method: Method, samples: &[SampleMetrics]) -> Result<MethodSummary> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("{dataset}/{method}: no samples")));
    }
    let col = |f: &dyn Fn(&SampleMetrics) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    let cs: Vec<f64> = samples.iter().filter_map(|s| s.cosine_similarity).collect();
    Ok(MethodSummary {
        dataset: dataset.to_string(),
        method,
        samples: samples.len(),
        ged: MeanStd::of(&col(&|s| s.ged as f64)).unwrap(),
        led: MeanStd::of(&col(&|s| s.led)).unwrap(),
        cosine_similarity: MeanStd::of(&cs),
        sic: MeanStd::of(&col(&|s| s.sic)).unwrap(),
        flip_ratio: samples.iter().filter(|s| s.flipped).count() as f64 / samples.len() as f64,
    })
}

/// Tab-separated table, one row per summary.
pub fn format_table(rows: &[MethodSummary]) -> String {
    let mut out = String::from("dataset\tmethod\tsamples\tGED\tLED\tCS\tSIC\tFR\n");
    for r in rows {
        let cs = r.cosine_similarity.map_or("n/a".to_string(), |c| c.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\n",
            r.dataset,
            r.method.display_name(),
            r.samples,
            r.ged,
            r.led,
            cs,
            r.sic,
            r.flip_ratio
        ));
    }
    out
}

pub const DEFAULT_MIN_COUNT: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    /// Ascending identity-score thresholds.
    pub thresholds: Vec<f64>,
    /// Mean validity of the samples with identity score at most the threshold.
    pub mean_validity: Vec<f64>,
    pub counts: Vec<usize>,
    pub min_count: usize,
}

fn check_pairs(identity: &[f64], validity: &[f64]) -> Result<()> {
    if identity.len() != validity.len() {
        return mismatch(format!("{} identity scores, {} validity scores", identity.len(), validity.len()));
    }
    if identity.iter().chain(validity).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    Ok(())
}

/// Mean validity below each distinct identity score, emitted once at least
/// `min_count` samples qualify. Sums run in ascending identity order.
pub fn tradeoff_curve(identity: &[f64], validity: &[f64], min_count: usize) -> Result<TradeoffCurve> {
    check_pairs(identity, validity)?;
    let mut order: Vec<usize> = (0..identity.len()).collect();
    order.sort_by(|&a, &b| identity[a].total_cmp(&identity[b]).then(a.cmp(&b)));
    let mut curve = TradeoffCurve {
        thresholds: Vec::new(),
        mean_validity: Vec::new(),
        counts: Vec::new(),
        min_count,
    };
    let mut sum = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        sum += validity[i];
        let last_of_group = order.get(pos + 1).is_none_or(|&j| identity[j] != identity[i]);
        let count = pos + 1;
        if last_of_group && count >= min_count {
            curve.thresholds.push(identity[i]);
            curve.mean_validity.push(sum / count as f64);
            curve.counts.push(count);
        }
    }
    Ok(curve)
}

/// Quadratic recomputation of [`tradeoff_curve`] used as a reference:
/// filters the samples anew for every threshold.
pub fn tradeoff_curve_naive(identity: &[f64], validity: &[f64], min_count: usize) -> Result<TradeoffCurve> {
    check_pairs(identity, validity)?;
    let mut thresholds: Vec<f64> = identity.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut curve = TradeoffCurve {
        thresholds: Vec::new(),
        mean_validity: Vec::new(),
        counts: Vec::new(),
        min_count,
    };
    for t in thresholds {
        let mut chosen: Vec<(f64, usize)> = identity
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= t)
            .map(|(i, &s)| (s, i))
            .collect();
        if chosen.len() < min_count {
            continue;
        }
        chosen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let total = chosen.iter().fold(0.0, |acc, &(_, i)| acc + validity[i]);
        curve.thresholds.push(t);
        curve.mean_validity.push(total / chosen.len() as f64);
        curve.counts.push(chosen.len());
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityMetric {
    Ged,
    Led,
    /// Negated cosine similarity, so that lower means closer.
    NegCosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityMetric {
    Sic,
    Flip,
}

impl IdentityMetric {
    pub const ALL: [IdentityMetric; 3] = [IdentityMetric::Ged, IdentityMetric::Led, IdentityMetric::NegCosine];

    pub fn label(self) -> &'static str {
        match self {
            IdentityMetric::Ged => "GED",
            IdentityMetric::Led => "LED",
            IdentityMetric::NegCosine => "negative cosine similarity",
        }
    }

    pub fn score(self, s: &SampleMetrics) -> Option<f64> {
        match self {
            IdentityMetric::Ged => Some(s.ged as f64),
            IdentityMetric::Led => Some(s.led),
            IdentityMetric::NegCosine => s.cosine_similarity.map(|c| -c),
        }
    }
}

impl ValidityMetric {
    pub const ALL: [ValidityMetric; 2] = [ValidityMetric::Sic, ValidityMetric::Flip];

    pub fn label(self) -> &'static str {
        match self {
            ValidityMetric::Sic => "SIC",
            ValidityMetric::Flip => "flip ratio",
        }
    }

    pub fn score(self, s: &SampleMetrics) -> f64 {
        match self {
            ValidityMetric::Sic => s.sic,
            ValidityMetric::Flip => f64::from(u8::from(s.flipped)),
        }
    }
}

/// Paired `(identity, validity)` scores; samples without an identity score
/// are skipped.
pub fn paired_scores(samples: &[SampleMetrics], id: IdentityMetric, val: ValidityMetric) -> (Vec<f64>, Vec<f64>) {
    samples
        .iter()
        .filter_map(|s| id.score(s).map(|x| (x, val.score(s))))
        .unzip()
}

/// Single edits under which identity-aligned GED changes by exactly one.
fn neighbours(g: &DenseGraph) -> Vec<DenseGraph> {
    let dims = g.dims();
    let n = dims.n;
    let mut out = Vec::new();
    for i in 0..n {
        match g.node_label(i) {
            Some(l) => {
                for c in (0..dims.d_v).filter(|&c| c != l) {
                    let mut h = g.clone();
                    h.set_node(i, Some(c));
                    out.push(h);
                }
                if (0..n).all(|j| !g.has_edge(i, j)) {
                    let mut h = g.clone();
                    h.set_node(i, None);
                    out.push(h);
                }
            }
            None => {
                for c in 0..dims.d_v {
                    let mut h = g.clone();
                    h.set_node(i, Some(c));
                    out.push(h);
                }
            }
        }
    }
    let labels: Vec<Option<usize>> = match dims.d_e {
        Some(d) => (0..d).map(Some).collect(),
        None => vec![None],
    };
    for i in 0..n {
        for j in i + 1..n {
            if !(g.exists(i) && g.exists(j)) {
                continue;
            }
            if g.has_edge(i, j) {
                let mut h = g.clone();
                h.set_edge(i, j, None);
                out.push(h);
                for &l in labels.iter().filter(|&&l| l != g.edge_label(i, j)) {
                    let mut h = g.clone();
                    h.set_edge(i, j, Some(l));
                    out.push(h);
                }
            } else {
                for &l in &labels {
                    let mut h = g.clone();
                    h.set_edge(i, j, Some(l));
                    out.push(h);
                }
            }
        }
    }
    out
}

pub const ORACLE_MAX_NODES: usize = 8;
pub const ORACLE_MAX_EDITS: usize = 3;

/// Breadth-first search over single edits: returns a graph with the
/// smallest identity-aligned GED to `g` that `clf` assigns `desired`, if
/// one lies within `max_edits`. Each level holds exactly the graphs at that
/// distance, so the first hit is minimal.
pub fn oracle_min_ged_counterfactual(
    g: &DenseGraph,
    desired: usize,
    clf: &Classifier,
    max_edits: usize,
) -> Result<Option<(DenseGraph, usize)>> {
    min_ged_search(g, max_edits, |batch| {
        Ok(clf.predict(batch)?.into_iter().map(|p| p == desired).collect())
    })
}

/// [`oracle_min_ged_counterfactual`] with an arbitrary batched acceptance
/// test in place of the classifier.
pub fn min_ged_search<F>(g: &DenseGraph, max_edits: usize, accept: F) -> Result<Option<(DenseGraph, usize)>>
where
    F: Fn(&[&DenseGraph]) -> Result<Vec<bool>>,
{
    if g.num_nodes() > ORACLE_MAX_NODES || max_edits > ORACLE_MAX_EDITS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search is limited to {ORACLE_MAX_NODES} nodes and {ORACLE_MAX_EDITS} edits"
        )));
    }
    if accept(&[g])?[0] {
        return Ok(Some((g.clone(), 0)));
    }
    let mut seen: HashSet<GraphRecord> = HashSet::from([GraphRecord::from_graph(g)]);
    let mut level = vec![g.clone()];
    for depth in 1..=max_edits {
        let mut next = Vec::new();
        for h in &level {
            for k in neighbours(h) {
                if seen.insert(GraphRecord::from_graph(&k)) {
                    next.push(k);
                }
            }
        }
        let hits = accept(&next.iter().collect::<Vec<_>>())?;
        if let Some(pos) = hits.iter().position(|&h| h) {
            return Ok(Some((next.swap_remove(pos), depth)));
        }
        level = next;
    }
    Ok(None)
}

#[cfg(test)]
mod tests;
