//! Trains both models on the synthetic cycle task, then searches the VAE
//! latent space for counterfactuals of a few test graphs and prints the
//! edits that flipped the classifier.
//!
//! cargo run --release --example counterfactuals -- [vae_epochs]

use graphcf::cgcf::{default_desired, generate_cgcf, CfConfig};
use graphcf::classifier::{train_classifier, TrainConfig};
use graphcf::dataset::{generate_synthetic, split, SplitSpec};
use graphcf::graph::DenseGraph;
use graphcf::metrics::ged;
use graphcf::vae::{train_pegvae, VaeConfig};

fn describe(g: &DenseGraph) -> String {
    let nodes: Vec<String> = g
        .existing_nodes()
        .into_iter()
        .map(|i| format!("{i}:{}", g.node_label(i).unwrap()))
        .collect();
    format!("nodes [{}] edges {:?}", nodes.join(" "), g.edges())
}

fn main() -> graphcf::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(150, |s| s.parse().expect("epoch count"));
    let data = generate_synthetic(500, 8, 0)?;
    let parts = split(&data, &SplitSpec::default())?;
    let (train, val, test) = (data.subset(&parts.train), data.subset(&parts.val), data.subset(&parts.test));

    let (clf, _) = train_classifier(&train, &val, &TrainConfig { epochs: 60, ..TrainConfig::default() })?;
    let (vae, _) = train_pegvae(&train, &val, &VaeConfig { epochs, ..VaeConfig::default() })?;

    let factuals: Vec<&DenseGraph> = test.graph_refs().into_iter().take(8).collect();
    let desired = default_desired(&clf, &factuals)?;
    let results = generate_cgcf(&vae, &clf, &factuals, &desired, &CfConfig::default())?;
    for r in &results {
        println!("graph {} (predicted {}, want {}):", r.index, r.factual_label, r.desired_label);
        println!("  factual        {}", describe(&r.factual));
        println!("  counterfactual {}", describe(&r.counterfactual));
        println!(
            "  flipped {} after {} iterations, GED {}",
            r.flipped,
            r.iterations_used,
            ged(&r.factual, &r.counterfactual)?
        );
    }
    Ok(())
}
