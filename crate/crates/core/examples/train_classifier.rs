//! Trains the invariant classifier on the synthetic cycle-detection task
//! and reports validation and test AUROC.
//!
//! cargo run --release --example train_classifier -- [graphs] [epochs]

use graphcf::classifier::{evaluate_auroc, train_classifier, TrainConfig};
use graphcf::dataset::{generate_synthetic, split, SplitSpec};

fn main() -> graphcf::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_graphs: usize = args.next().map_or(500, |s| s.parse().expect("graph count"));
    let epochs: usize = args.next().map_or(100, |s| s.parse().expect("epoch count"));

    let data = generate_synthetic(n_graphs, 8, 0)?;
    let parts = split(&data, &SplitSpec::default())?;
    let (train, val, test) = (data.subset(&parts.train), data.subset(&parts.val), data.subset(&parts.test));
    println!("{} train / {} val / {} test graphs, class counts {:?}", train.len(), val.len(), test.len(), data.class_counts());

    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let (model, history) = train_classifier(&train, &val, &config)?;
    for h in history.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:4}  train loss {:.4}  val loss {:.4}  val AUROC {}",
            h.epoch,
            h.train_loss,
            h.val_loss,
            h.val_auroc.map_or("-".into(), |a| format!("{a:.4}"))
        );
    }
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    println!("selected model: val AUROC {:.4}, test AUROC {:.4}", evaluate_auroc(&model, &val)?, evaluate_auroc(&model, &test)?);
    Ok(())
}
