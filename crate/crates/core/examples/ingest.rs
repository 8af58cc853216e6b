//! Loads a benchmark in the sparse text format (or the synthetic set),
//! applies the node-count and rare-label filters and prints statistics.
//!
//! cargo run --release --example ingest -- <dir> <name> [max_nodes] [min_freq]
//! cargo run --release --example ingest -- synthetic

use std::path::Path;

use graphcf::dataset::{
    dataset_stats, filter_dataset, generate_synthetic, load_tudataset, make_collection, split, SplitSpec,
};

fn main() -> graphcf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let collection = match args.first().map(String::as_str) {
        None | Some("synthetic") => generate_synthetic(500, 8, 0)?,
        Some(dir) => {
            let name = args.get(1).expect("dataset name, e.g. AIDS");
            let max_nodes = args.get(2).map_or(50, |s| s.parse().expect("max_nodes"));
            let min_freq = args.get(3).map_or(50, |s| s.parse().expect("min_freq"));
            let raw = load_tudataset(Path::new(dir), name)?;
            let filtered = filter_dataset(&raw, max_nodes, min_freq)?;
            println!("{name}: {} raw graphs, {} kept", raw.graphs.len(), filtered.graphs.len());
            println!("node classes kept: {:?}", filtered.node_classes);
            make_collection(&filtered)?
        }
    };
    let parts = split(&collection, &SplitSpec::default())?;
    println!("{}", serde_json::to_string_pretty(&dataset_stats(&collection, &parts))?);
    Ok(())
}
