//! Enumerates the partition basis of equivariant linear maps and checks
//! numerically that a random layer commutes with node permutations.
//!
//! cargo run --release --example equivariant_basis

use std::rc::Rc;

use graphcf::autodiff::{Tape, Tensor};
use graphcf::equivariant::{bell, enumerate_basis, permute_batched};
use graphcf::graph::Permutation;
use graphcf::nn::NodeMask;
use ndarray::{Array, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> graphcf::Result<()> {
    for (k, l) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        let basis = enumerate_basis(k, l)?;
        println!("order {k} -> {l}: {} elements (Bell({}) = {})", basis.len(), k + l, bell(k + l));
        for e in basis.iter().take(3) {
            println!("    {}", e.describe());
        }
    }

    let n = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let basis = Rc::new(enumerate_basis(2, 2)?);
    let x: Tensor = Array::from_shape_simple_fn(IxDyn(&[1, n, n, 3]), || StandardNormal.sample(&mut rng));
    let w: Tensor = Array::from_shape_simple_fn(IxDyn(&[basis.len(), 3, 4]), || StandardNormal.sample(&mut rng));
    let mask = NodeMask::full(1, n);
    let layer = |x: &Tensor| {
        let tape = Tape::new();
        let y = tape.equivariant_linear(tape.constant(x.clone()), tape.constant(w.clone()), &basis, &mask, &mask);
        (*tape.value(y)).clone()
    };
    let y = layer(&x);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = Permutation::random(n, &mut rng);
        let diff = &layer(&permute_batched(&x, 2, &p)) - &permute_batched(&y, 2, &p);
        worst = worst.max(diff.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    println!("edge-to-edge layer, 100 random permutations: max |f(Px) - P f(x)| = {worst:.2e}");
    Ok(())
}
