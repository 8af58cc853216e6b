use super::*;
use crate::graph::tests::random_graph;
use crate::graph::{apply_permutation, pad_graph, GraphDims, Permutation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims() -> GraphDims {
    GraphDims::new(5, 3, Some(2))
}

#[test]
fn ged_examples() {
    let g = pad_graph(&[0, 1, 2, 0], 3, &[(0, 1), (1, 2)], Some(&[0, 1]), Some(2), 5).unwrap();
    assert_eq!(ged(&g, &g).unwrap(), 0);
    let plus = pad_graph(&[0, 1, 2, 0], 3, &[(0, 1), (1, 2), (2, 3)], Some(&[0, 1, 0]), Some(2), 5).unwrap();
    assert_eq!(ged(&g, &plus).unwrap(), 1);
    let two = pad_graph(&[0, 2, 2, 0], 3, &[(0, 1)], Some(&[0]), Some(2), 5).unwrap();
    assert_eq!(ged(&g, &two).unwrap(), 2);
    let relabelled = pad_graph(&[0, 1, 2, 0], 3, &[(0, 1), (1, 2)], Some(&[1, 1]), Some(2), 5).unwrap();
    assert_eq!(ged(&g, &relabelled).unwrap(), 1);
    // deleting node 3 and its one edge from `plus` costs two edits
    assert_eq!(ged(&plus, &pad_graph(&[0, 1, 2], 3, &[(0, 1), (1, 2)], Some(&[0, 1]), Some(2), 5).unwrap()).unwrap(), 2);
    assert!(ged(&g, &DenseGraph::empty(GraphDims::new(4, 3, Some(2)))).is_err());
}

#[test]
fn single_edit_levels_match_ged_exhaustively() {
    let small = GraphDims::new(4, 2, Some(2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let g = random_graph(&mut rng, small);
        let mut seen = HashSet::from([GraphRecord::from_graph(&g)]);
        let mut level = vec![g.clone()];
        for depth in 1..=3 {
            let mut next = Vec::new();
            for h in &level {
                for k in neighbours(h) {
                    assert!(crate::graph::validate(&k).is_valid());
                    if seen.insert(GraphRecord::from_graph(&k)) {
                        assert_eq!(ged(&g, &k).unwrap(), depth);
                        next.push(k);
                    }
                }
            }
            level = next;
        }
    }
}

/// Every valid graph on three slots with two node and two edge classes.
fn all_graphs_on_three_slots() -> Vec<DenseGraph> {
    let d = GraphDims::new(3, 2, Some(2));
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut out = Vec::new();
    for nodes in 0..27usize {
        let labels: Vec<Option<usize>> = (0..3).map(|i| [None, Some(0), Some(1)][(nodes / 3usize.pow(i)) % 3]).collect();
        for edges in 0..27usize {
            let mut ok = true;
            let mut rec = GraphRecord {
                nodes: labels.clone(),
                edges: Vec::new(),
            };
            for (k, &(i, j)) in pairs.iter().enumerate() {
                match (edges / 3usize.pow(k as u32)) % 3 {
                    0 => {}
                    c => {
                        ok &= labels[i].is_some() && labels[j].is_some();
                        rec.edges.push((i, j, Some(c - 1)));
                    }
                }
            }
            if ok {
                out.push(rec.to_graph(d).unwrap());
            }
        }
    }
    out
}

#[test]
fn search_finds_the_enumerated_minimum() {
    let all = all_graphs_on_three_slots();
    let targets = [
        |h: &DenseGraph| h.num_edges() >= 2 && h.node_label(0) == Some(1),
        |h: &DenseGraph| h.num_nodes() == 0,
        |h: &DenseGraph| h.edges().iter().any(|&(i, j)| h.edge_label(i, j) == Some(1)) && h.num_nodes() == 2,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for accept in targets {
        for _ in 0..15 {
            let g = &all[rng.random_range(0..all.len())];
            let best = all.iter().filter(|h| accept(h)).map(|h| ged(g, h).unwrap()).min();
            let found = min_ged_search(g, 3, |b| Ok(b.iter().map(|h| accept(h)).collect())).unwrap();
            match (best, found) {
                (Some(b), Some((h, d))) if b <= 3 => {
                    assert_eq!(d, b);
                    assert!(accept(&h));
                    assert_eq!(ged(g, &h).unwrap(), d);
                }
                (Some(b), None) => assert!(b > 3),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }
}

#[test]
fn search_edge_cases() {
    let g = pad_graph(&[0, 1, 0], 3, &[(0, 1), (1, 2)], Some(&[0, 0]), Some(2), 5).unwrap();
    let m = g.num_edges();
    let (h, d) = min_ged_search(&g, 3, |b| Ok(b.iter().map(|h| h.num_edges() < m).collect())).unwrap().unwrap();
    assert_eq!((d, h.num_edges()), (1, 1));
    assert!(min_ged_search(&g, 3, |b| Ok(vec![false; b.len()])).unwrap().is_none());
    assert_eq!(min_ged_search(&g, 2, |b| Ok(vec![true; b.len()])).unwrap().unwrap().1, 0);
    assert!(min_ged_search(&g, 4, |b| Ok(vec![true; b.len()])).is_err());
}

#[test]
fn latent_distance_examples() {
    let z = LatentCode::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
    assert_eq!(led(&z, &z).unwrap(), 0.0);
    let mut w = z.clone();
    w[[1, 1]] += 1.0;
    assert_eq!(led(&z, &w).unwrap(), 1.0);
    assert!(led(&z, &LatentCode::zeros((2, 2))).is_err());
}

#[test]
fn cosine_and_sic_examples() {
    let e = [1.0, -2.0, 0.5];
    assert!((cosine_similarity(&e, &e).unwrap() - 1.0).abs() < 1e-15);
    assert!((cosine_similarity(&e, &e.map(|x| -x)).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!((sic(0.9, 0.3).unwrap() - 0.6).abs() < 1e-15);
    assert_eq!(sic(0.4, 0.4).unwrap(), 0.0);
    assert_eq!(sic(0.0, 1.0).unwrap(), -1.0);
    assert!(sic(1.2, 0.0).is_err());
}

#[test]
fn summaries_use_population_std() {
    let m = MeanStd::of(&[1.0, 3.0]).unwrap();
    assert_eq!((m.mean, m.std, m.count), (2.0, 1.0, 2));
    assert!(MeanStd::of(&[]).is_none());
    let samples: Vec<SampleMetrics> = (0..4)
        .map(|i| SampleMetrics {
            index: i,
            ged: i,
            led: 1.0,
            cosine_similarity: (i > 0).then_some(0.5),
            sic: 0.25,
            flipped: i % 2 == 0,
        })
        .collect();
    let s = summarize("toy", Method::Cgcf, &samples).unwrap();
    assert_eq!(s.flip_ratio, 0.5);
    assert_eq!(s.cosine_similarity.unwrap().count, 3);
    assert!(format_table(&[s]).lines().count() == 2);
    assert!(summarize("toy", Method::Cgcf, &[]).is_err());
}

#[test]
fn tradeoff_gate_and_constant_validity() {
    let ids: Vec<f64> = (0..9).map(f64::from).collect();
    assert!(tradeoff_curve(&ids, &[1.0; 9], 10).unwrap().thresholds.is_empty());
    let ids: Vec<f64> = (0..30).map(|i| f64::from(i % 7)).collect();
    let c = tradeoff_curve(&ids, &[0.7; 30], 10).unwrap();
    assert!(!c.thresholds.is_empty());
    assert!(c.mean_validity.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    assert_eq!(*c.counts.last().unwrap(), 30);
    assert!(tradeoff_curve(&ids, &[0.7; 29], 10).is_err());
}

proptest! {
    #[test]
    fn ged_is_a_permutation_invariant_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_graph(&mut rng, dims()), random_graph(&mut rng, dims()), random_graph(&mut rng, dims()));
        let (ab, ba) = (ged(&a, &b).unwrap(), ged(&b, &a).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(ged(&a, &c).unwrap() <= ab + ged(&b, &c).unwrap());
        let p = Permutation::random(5, &mut rng);
        let (pa, pb) = (apply_permutation(&a, &p).unwrap(), apply_permutation(&b, &p).unwrap());
        prop_assert_eq!(ged(&pa, &pb).unwrap(), ab);
    }

    #[test]
    fn led_satisfies_the_triangle_inequality(xs in prop::collection::vec(-5.0f64..5.0, 18)) {
        let z = |k: usize| LatentCode::from_shape_vec((3, 2), xs[6 * k..6 * k + 6].to_vec()).unwrap();
        let (a, b, c) = (z(0), z(1), z(2));
        prop_assert!(led(&a, &c).unwrap() <= led(&a, &b).unwrap() + led(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn tradeoff_matches_naive_recomputation(
        pairs in prop::collection::vec((0u8..40, -1.0f64..1.0), 0..120),
        min_count in 1usize..15,
    ) {
        let ids: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 4.0).collect();
        let vals: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let fast = tradeoff_curve(&ids, &vals, min_count).unwrap();
        prop_assert_eq!(&fast, &tradeoff_curve_naive(&ids, &vals, min_count).unwrap());
        prop_assert!(fast.counts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(fast.counts.iter().all(|&c| c >= min_count));
    }
}
