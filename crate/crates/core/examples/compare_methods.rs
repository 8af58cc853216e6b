//! Runs the guided search and the three latent-space baselines on the
//! synthetic test split, prints the metric table and the minimum-edit
//! oracle for the flipped guided counterfactuals.
//!
//! cargo run --release --example compare_methods -- [vae_epochs]

use graphcf::cgcf::{
    baseline_knn_mean, baseline_nn_train, baseline_random, default_desired, generate_cgcf, CfConfig, LatentIndex,
    Method,
};
use graphcf::classifier::{train_classifier, TrainConfig};
use graphcf::dataset::{generate_synthetic, split, SplitSpec};
use graphcf::metrics::{format_table, ged, oracle_min_ged_counterfactual, sample_metrics, summarize};
use graphcf::vae::{train_pegvae, VaeConfig};

fn main() -> graphcf::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(150, |s| s.parse().expect("epoch count"));
    let data = generate_synthetic(500, 8, 0)?;
    let parts = split(&data, &SplitSpec::default())?;
    let (train, val, test) = (data.subset(&parts.train), data.subset(&parts.val), data.subset(&parts.test));
    let (clf, _) = train_classifier(&train, &val, &TrainConfig { epochs: 60, ..TrainConfig::default() })?;
    let (vae, _) = train_pegvae(&train, &val, &VaeConfig { epochs, ..VaeConfig::default() })?;

    let factuals = test.graph_refs();
    let desired = default_desired(&clf, &factuals)?;
    let index = LatentIndex::build(&vae, &train)?;
    let cgcf = generate_cgcf(&vae, &clf, &factuals, &desired, &CfConfig::default())?;
    let runs = [
        (Method::Random, baseline_random(&vae, &clf, &factuals, &desired, 0)?),
        (Method::Nn, baseline_nn_train(&vae, &clf, &index, &train, &factuals, &desired)?),
        (Method::KnnMean, baseline_knn_mean(&vae, &clf, &index, &factuals, &desired, 10)?),
        (Method::Cgcf, cgcf.clone()),
    ];
    let mut rows = Vec::new();
    for (m, results) in &runs {
        rows.push(summarize("synthetic", *m, &sample_metrics(&clf, results)?)?);
    }
    print!("{}", format_table(&rows));

    println!("\nminimum-edit oracle (up to 3 edits) for flipped guided counterfactuals:");
    for r in cgcf.iter().filter(|r| r.flipped).take(10) {
        let d = ged(&r.factual, &r.counterfactual)?;
        let best = oracle_min_ged_counterfactual(&r.factual, r.desired_label, &clf, d.min(3))?;
        let best = best.map_or("> 3".to_string(), |(_, k)| k.to_string());
        println!("  graph {:3}: guided GED {d:2}, oracle GED {best}", r.index);
    }
    Ok(())
}
