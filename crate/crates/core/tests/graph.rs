mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use neurograph::graph::{build_adjacency, edge_dropout, spectral_bundle, Channel, WeightedGraph};
use neurograph::ChannelLayout;
use proptest::prelude::*;

fn connected_layout(seed: u64) -> (ChannelLayout, WeightedGraph) {
    // reseed until the radius graph is connected (λmax > 0 is all the bundle needs)
    for s in seed * 1000.. {
        let c = 3 + (s % 62) as usize;
        let layout = random_layout(c, s);
        let g = build_adjacency(&layout, 0.75).unwrap();
        if spectral_bundle(&g).is_ok() {
            return (layout, g);
        }
    }
    unreachable!()
}

#[test]
fn random_layouts_satisfy_spectral_invariants() {
    for seed in 0..100 {
        let (layout, g) = connected_layout(seed);
        let a = g.adjacency();
        let brute = brute_adjacency(&layout, 0.75);
        for (x, y) in a.iter().zip(brute.iter()) {
            assert_eq!(*x > 0.0, *y > 0.0, "seed {seed}: edge sets differ");
            assert!((x - y).abs() <= 1e-12 * y, "seed {seed}: {x} vs {y}");
        }
        assert_eq!(a, &a.transpose());
        let sb = spectral_bundle(&g).unwrap();
        for i in 0..layout.len() {
            assert!(sb.laplacian.row(i).sum().abs() < 1e-10);
        }
        let ev = SymmetricEigen::new(sb.rescaled.clone()).eigenvalues;
        assert!(ev.iter().all(|&v| (-1.0 - 1e-8..=1.0 + 1e-8).contains(&v)), "seed {seed}: {ev}");
    }
}

#[test]
fn two_node_closed_forms() {
    let d: f64 = 0.4;
    let layout = ChannelLayout::new(
        vec![
            Channel { name: "a".into(), pos: [0.5, 0.0, 0.0] },
            Channel { name: "b".into(), pos: [0.5, d, 0.0] },
        ],
        Some(1.0),
    )
    .unwrap();
    let g = build_adjacency(&layout, 0.75).unwrap();
    let w = 1.0 / (d * d);
    assert_eq!(g.adjacency()[(0, 1)], w);
    let sb = spectral_bundle(&g).unwrap();
    // L = w [[1,-1],[-1,1]], λmax = 2w, L̃ = [[0,-1],[-1,0]]
    assert!((sb.lambda_max - 2.0 * w).abs() < 1e-12 * w);
    let want = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
    assert!((sb.rescaled - want).abs().max() < 1e-12);
}

#[test]
fn edge_dropout_mean_matches_binomial() {
    // a ring of 20 edges
    let n = 20;
    let layout = random_layout(n, 7);
    let a = DMatrix::from_fn(n, n, |i, j| if (i + 1) % n == j || (j + 1) % n == i { 1.0 + i as f64 } else { 0.0 });
    let a = DMatrix::from_fn(n, n, |i, j| a[(i, j)].max(a[(j, i)]));
    let g = WeightedGraph::from_adjacency(layout, a);
    assert_eq!(g.edges().len(), 20);
    let mut r = rng(3);
    let draws = 10_000;
    let mut total = 0usize;
    for _ in 0..draws {
        let d = edge_dropout(&g, 0.2, &mut r).unwrap();
        let da = d.adjacency();
        assert_eq!(da, &da.transpose());
        for (i, j) in d.edges() {
            assert_eq!(da[(i, j)], g.adjacency()[(i, j)]);
        }
        total += d.edges().len();
    }
    let mean = total as f64 / draws as f64;
    assert!((mean - 16.0).abs() < 0.2, "mean surviving edges {mean}");
    let again = edge_dropout(&g, 0.2, &mut rng(9)).unwrap();
    assert_eq!(again, edge_dropout(&g, 0.2, &mut rng(9)).unwrap());
}

proptest! {
    #[test]
    fn growing_the_radius_only_adds_edges(seed in 0u64..10_000, c in 2usize..30, f1 in 0.05f64..1.0, f2 in 0.05f64..1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let layout = random_layout(c, seed);
        let small = build_adjacency(&layout, lo).unwrap();
        let large = build_adjacency(&layout, hi).unwrap();
        for i in 0..c {
            for j in 0..c {
                let s = small.adjacency()[(i, j)];
                if s > 0.0 {
                    prop_assert_eq!(s, large.adjacency()[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn ones_vector_is_in_the_kernel(seed in 0u64..10_000, c in 2usize..40) {
        let layout = random_layout(c, seed);
        let g = build_adjacency(&layout, 0.75).unwrap();
        let l = neurograph::graph::laplacian(g.adjacency());
        let v = &l * nalgebra::DVector::from_element(c, 1.0);
        prop_assert!(v.amax() < 1e-10 * (1.0 + l.amax()));
    }
}
