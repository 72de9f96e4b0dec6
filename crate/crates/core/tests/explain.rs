mod common;

use common::*;
use nalgebra::DMatrix;
use neurograph::data::Group;
use neurograph::explain::{
    contribution_map, explain_loss, masked_forward, optimize_masks, Coefficients, ExplainConfig, MaskSet,
};
use neurograph::graph::{laplacian, rescale_laplacian};
use neurograph::{ChannelLayout, GnnClassifier, Mode};
use proptest::prelude::*;
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_logits(model: &GnnClassifier, seed: u64) -> MaskSet {
    let mut r = rng(seed);
    let edges = model.graph().edges();
    let node = (0..model.n_channels()).map(|_| r.random_range(-3.0..3.0)).collect();
    let edge = (0..edges.len()).map(|_| r.random_range(-3.0..3.0)).collect();
    MaskSet::from_logits(node, edge, edges)
}

#[test]
fn masked_forward_matches_explicit_masking() {
    let layout = ChannelLayout::standard_12();
    let model = GnnClassifier::new(tiny_arch(24), &layout, 1).unwrap();
    let batch = random_batch(3, 12, 24, 2);
    for seed in 0..5 {
        let masks = random_logits(&model, seed);
        let nm = masks.node_masks();
        let mut x = batch.clone();
        for s in 0..3 {
            for c in 0..12 {
                for v in &mut x.data_mut()[(s * 12 + c) * 24..(s * 12 + c + 1) * 24] {
                    *v *= nm[c];
                }
            }
        }
        let a = model.graph().adjacency();
        let mut am = DMatrix::zeros(12, 12);
        for (k, &(i, j)) in masks.edges.iter().enumerate() {
            let w = a[(i, j)] * masks.edge_masks()[k];
            am[(i, j)] = w;
            am[(j, i)] = w;
        }
        let lt = rescale_laplacian(&laplacian(&am), model.spectral().lambda_max);
        let want = model.forward_traced(&x, Mode::Eval, Some(&lt), &mut rng(0)).unwrap().logits;
        let got = masked_forward(&model, &masks, &batch).unwrap();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_terms_match_their_definitions() {
    let layout = ChannelLayout::standard_12();
    let model = GnnClassifier::new(tiny_arch(24), &layout, 1).unwrap();
    let batch = random_batch(5, 12, 24, 3);
    let labels = [0, 1, 1, 0, 1];
    for seed in 0..5 {
        let masks = random_logits(&model, seed);
        let logits = masked_forward(&model, &masks, &batch).unwrap();
        let coef = Coefficients { ces: 0.7, nms: 1.3, ems: 0.2, nme: 2.0, eme: 0.5 };
        let terms = explain_loss(&masks, &logits, &labels, coef).unwrap();
        let ce: f64 = logits
            .data()
            .chunks(2)
            .zip(&labels)
            .map(|(r, &y)| {
                let m = r[0].max(r[1]);
                -(r[y] - m - ((r[0] - m).exp() + (r[1] - m).exp()).ln())
            })
            .sum::<f64>()
            / labels.len() as f64;
        let ent = |m: f64| {
            let m = m.clamp(1e-7, 1.0 - 1e-7);
            -m * m.ln() - (1.0 - m) * (1.0 - m).ln()
        };
        let node: Vec<f64> = masks.node.value.data().iter().map(|&l| sigmoid(l)).collect();
        let edge: Vec<f64> = masks.edge.value.data().iter().map(|&l| sigmoid(l)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let want = 0.7 * ce
            + 1.3 * mean(&node)
            + 0.2 * mean(&edge)
            + 2.0 * mean(&node.iter().map(|&m| ent(m)).collect::<Vec<_>>())
            + 0.5 * mean(&edge.iter().map(|&m| ent(m)).collect::<Vec<_>>());
        assert!((terms.total() - want).abs() < 1e-12, "{} vs {want}", terms.total());
    }
}

fn desk_model(seed: u64) -> (GnnClassifier, neurograph::data::EpochDataset) {
    let mut spec = desk_spec(seed).with_amplitude(0.8);
    spec.groups = vec![Group::FirstLeft];
    spec.n_participants = 3;
    spec.trials_per_participant = 20;
    let ds = synth(&spec);
    let model = GnnClassifier::new(desk_arch(), ds.layout(), seed).unwrap();
    (model, ds)
}

#[test]
fn optimization_leaves_the_model_untouched_and_is_seeded() {
    let (model, ds) = desk_model(2);
    let before = model.checksum();
    let cfg = ExplainConfig { epochs: 10, seed: 4, ..Default::default() };
    let a = optimize_masks(&model, &ds, &cfg).unwrap();
    let b = optimize_masks(&model, &ds, &cfg).unwrap();
    assert_eq!(model.checksum(), before);
    assert_eq!(a.masks.node.value, b.masks.node.value);
    assert_eq!(a.history.len(), 10);
}

#[test]
fn size_terms_alone_shrink_the_masks() {
    let (model, ds) = desk_model(3);
    let cfg = ExplainConfig {
        epochs: 200,
        learning_rate: 0.05,
        coefficients: Coefficients { ces: 0.0, nms: 1.0, ems: 1.0, nme: 0.0, eme: 0.0 },
        ..Default::default()
    };
    let ex = optimize_masks(&model, &ds, &cfg).unwrap();
    assert!(ex.masks.node_masks().iter().all(|&m| m < 0.05));
    assert!(ex.masks.edge_masks().iter().all(|&m| m < 0.05));
}

proptest! {
    #[test]
    fn ranking_ignores_monotone_transforms(raw in prop::collection::vec(-5.0f64..5.0, 12), scale in 0.1f64..4.0, shift in -2.0f64..2.0) {
        let layout = ChannelLayout::standard_12();
        let model = GnnClassifier::new(tiny_arch(24), &layout, 0).unwrap();
        let edges = model.graph().edges();
        let ne = edges.len();
        let base = contribution_map(&MaskSet::from_logits(raw.clone(), vec![0.0; ne], edges.clone()), &layout);
        let moved: Vec<f64> = raw.iter().map(|v| (scale * v + shift).tanh() * 3.0 + v * 1e-3).collect();
        let other = contribution_map(&MaskSet::from_logits(moved, vec![0.0; ne], edges), &layout);
        prop_assert_eq!(base.ranking(), other.ranking());
        let mean = base.scores.iter().sum::<f64>() / 12.0;
        let var = base.scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 12.0;
        prop_assert!(mean.abs() < 1e-10 && (var.sqrt() - 1.0).abs() < 1e-10);
    }
}
