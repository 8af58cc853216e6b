//! Graph tensors under node permutations: the classifier's output and the
//! VAE's KL term do not change, while encoder outputs move with the nodes.
//!
//! cargo run --release --example permutations

use graphcf::classifier::{Classifier, TrainConfig};
use graphcf::graph::{apply_permutation, pad_graph, GraphDims, Permutation};
use graphcf::metrics::ged;
use graphcf::vae::{PegVae, VaeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> graphcf::Result<()> {
    // a labelled triangle with a pendant node, padded to six slots
    let g = pad_graph(&[0, 1, 1, 2], 3, &[(0, 1), (0, 2), (1, 2), (2, 3)], Some(&[0, 0, 1, 1]), Some(2), 6)?;
    let dims = GraphDims::new(6, 3, Some(2));
    let p = Permutation::random(6, &mut ChaCha8Rng::seed_from_u64(3));
    let h = apply_permutation(&g, &p)?;
    println!("permutation {:?}", p.as_slice());
    println!("edges before {:?}\nedges after  {:?}", g.edges(), h.edges());
    println!("aligned GED between the two orderings: {}", ged(&g, &h)?);

    let clf = Classifier::new(dims, &TrainConfig { seed: 1, ..TrainConfig::default() });
    let probs = clf.predict_proba(&[&g, &h])?;
    println!("classifier P(y=1): {:.12} vs {:.12}", probs[0][1], probs[1][1]);

    let vae = PegVae::new(dims, &VaeConfig { seed: 2, ..VaeConfig::default() });
    let post = vae.encode(&[&g, &h])?;
    let moved = p.permute_rows(&post[0].mean);
    let err = (&moved - &post[1].mean).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("encoder mean: max |P mu(G) - mu(PG)| = {err:.2e}");
    println!("KL: {:.10} vs {:.10}", vae.elbo_loss(&g, 0.5, 0)?.kl, vae.elbo_loss(&h, 0.5, 0)?.kl);
    Ok(())
}
