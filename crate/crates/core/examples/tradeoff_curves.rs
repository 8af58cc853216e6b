//! Builds identity/validity trade-off curves from synthetic per-sample
//! scores and draws them, showing the minimum-count gate.
//!
//! cargo run --release --example tradeoff_curves -- [out.svg]

use graphcf::cgcf::Method;
use graphcf::metrics::{paired_scores, tradeoff_curve, IdentityMetric, SampleMetrics, ValidityMetric};
use graphcf::pipeline::{plot_tradeoffs, CurveRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> graphcf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "tradeoff_example.svg".into());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut curves = Vec::new();
    // two made-up methods: larger edits flip more often for the second
    for (m, slope) in [(Method::Random, 0.02), (Method::Cgcf, 0.08)] {
        let samples: Vec<SampleMetrics> = (0..200)
            .map(|i| {
                let ged = rng.random_range(0..15usize);
                let p = (0.2 + slope * ged as f64).min(1.0);
                SampleMetrics {
                    index: i,
                    ged,
                    led: ged as f64 * 0.3 + rng.random_range(0.0..1.0),
                    cosine_similarity: Some(1.0 - ged as f64 / 20.0),
                    sic: p - 0.5,
                    flipped: rng.random_bool(p),
                }
            })
            .collect();
        for id in IdentityMetric::ALL {
            for val in ValidityMetric::ALL {
                let (x, y) = paired_scores(&samples, id, val);
                let curve = tradeoff_curve(&x, &y, 10)?;
                if id == IdentityMetric::Ged && val == ValidityMetric::Flip {
                    println!("{m}: GED thresholds {:?}", curve.thresholds);
                    println!("{m}: first counts   {:?}", &curve.counts[..curve.counts.len().min(6)]);
                }
                curves.push(CurveRecord { method: m, identity: id, validity: val, curve });
            }
        }
    }
    plot_tradeoffs(std::path::Path::new(&out), &curves, &[Method::Random, Method::Cgcf])?;
    println!("wrote {out}");
    Ok(())
}
