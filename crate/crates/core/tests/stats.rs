mod common;

use common::*;
use neurograph::mapgeo::{mann_whitney_u, wilcoxon_signed_rank, TestMethod};
use proptest::prelude::*;

/// Small integer-valued samples so ties are frequent.
fn samples(n: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..5) as f64).collect()
}

#[test]
fn mann_whitney_matches_enumeration_for_every_size_up_to_eight() {
    for na in 1..=7 {
        for nb in 1..=(8 - na) {
            for seed in 0..20 {
                let a = samples(na, seed * 31 + na as u64);
                let b = samples(nb, seed * 17 + nb as u64 + 1000);
                let got = mann_whitney_u(&a, &b).unwrap();
                let (u, p) = brute_mann_whitney(&a, &b);
                assert_eq!(got.method, TestMethod::Exact);
                assert!((got.statistic - u).abs() < 1e-12, "{a:?} {b:?}");
                assert!((got.p - p).abs() < 1e-12, "{a:?} {b:?}: {} vs {p}", got.p);
            }
        }
    }
}

#[test]
fn wilcoxon_matches_enumeration_for_every_size_up_to_eight() {
    for n in 1..=8 {
        for seed in 0..40 {
            let a = samples(n, seed * 13 + n as u64);
            let b = samples(n, seed * 7 + 500 + n as u64);
            let got = wilcoxon_signed_rank(&a, &b).unwrap();
            match brute_wilcoxon(&a, &b) {
                None => assert!(got.all_zero && got.p == 1.0),
                Some((w, p)) => {
                    assert!((got.statistic - w).abs() < 1e-12, "{a:?} {b:?}");
                    assert!((got.p - p).abs() < 1e-12, "{a:?} {b:?}: {} vs {p}", got.p);
                }
            }
        }
    }
}

#[test]
fn worked_examples() {
    let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert!((r.p - 1.0 / 3.0).abs() < 1e-15);
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    assert_eq!((r.statistic, r.p), (0.0, 0.25));
}

proptest! {
    #[test]
    fn mann_whitney_is_symmetric_and_a_probability(a in prop::collection::vec(-3i32..3, 1..7), b in prop::collection::vec(-3i32..3, 1..7)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
    }

    #[test]
    fn normal_approximation_tracks_large_samples(shift in 0.0f64..3.0, seed in 0u64..1000) {
        use rand_distr::{Distribution, Normal};
        let mut r = rng(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..30).map(|_| n.sample(&mut r)).collect();
        let b: Vec<f64> = (0..30).map(|_| n.sample(&mut r) + shift).collect();
        let res = mann_whitney_u(&a, &b).unwrap();
        prop_assert_eq!(res.method, TestMethod::Normal);
        prop_assert!(res.p >= 0.0 && res.p <= 1.0);
    }
}
