mod common;

use std::collections::HashSet;
use std::sync::Mutex;

use common::*;
use neurograph::data::{EpochDataset, Group, Label, TrialEpoch};
use neurograph::nn::Tensor;
use neurograph::trainer::{
    check_fold_plan, class_weights, cross_validate, make_folds, pretrain, EpochStore, Phase, TrainConfig,
};
use neurograph::{ChannelLayout, GnnClassifier};
use rand::Rng;

/// Labels and participants only; signals are never needed to plan folds.
struct Meta(Vec<(Label, u16)>);

impl EpochStore for Meta {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn label(&self, i: usize) -> Label {
        self.0[i].0
    }
    fn participant(&self, i: usize) -> u16 {
        self.0[i].1
    }
    fn batch(&self, _: &[usize], _: Phase) -> (Tensor, Vec<usize>) {
        unreachable!("fold planning must not read signals")
    }
}

fn uneven(seed: u64) -> Meta {
    let mut r = rng(seed);
    let participants = r.random_range(2..12);
    let mut v = Vec::new();
    for p in 0..participants {
        let n = r.random_range(3..40);
        let bias = r.random_range(0.2..0.8);
        for _ in 0..n {
            let label = if r.random_bool(bias) { Label::Success } else { Label::Failure };
            v.push((label, p as u16));
        }
    }
    Meta(v)
}

#[test]
fn fold_plans_hold_their_invariants_on_uneven_data() {
    for seed in 0..100 {
        let meta = uneven(seed);
        let plan = make_folds(&meta, 10, seed).unwrap();
        check_fold_plan(&meta, &plan, 1).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(plan, make_folds(&meta, 10, seed).unwrap());
    }
}

/// Records which indices each phase reads.
struct Tracked<'a> {
    inner: &'a EpochDataset,
    reads: Mutex<Vec<(Phase, usize)>>,
}

impl EpochStore for Tracked<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn label(&self, i: usize) -> Label {
        self.inner.epochs()[i].label
    }
    fn participant(&self, i: usize) -> u16 {
        self.inner.epochs()[i].participant
    }
    fn batch(&self, indices: &[usize], phase: Phase) -> (Tensor, Vec<usize>) {
        self.reads.lock().unwrap().extend(indices.iter().map(|&i| (phase, i)));
        self.inner.batch(indices)
    }
}

fn small_dataset(seed: u64) -> EpochDataset {
    let mut spec = desk_spec(seed).with_amplitude(0.5);
    spec.groups = vec![Group::FirstLeft];
    spec.n_participants = 3;
    spec.trials_per_participant = 20;
    synth(&spec)
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 1e-3, epochs: 2, checkpoints: vec![], seed, ..Default::default() }
}

#[test]
fn held_out_signals_are_never_read_during_training() {
    let ds = small_dataset(1);
    let store = Tracked { inner: &ds, reads: Mutex::new(Vec::new()) };
    let init = GnnClassifier::new(desk_arch(), ds.layout(), 0).unwrap();
    let report = cross_validate(&store, 4, &quick_cfg(3), &init, 2, None).unwrap();
    let reads = store.reads.into_inner().unwrap();
    for (f, fold) in report.plan.folds.iter().enumerate() {
        let held: HashSet<usize> = fold.iter().copied().collect();
        let trained: HashSet<usize> =
            reads.iter().filter(|(p, _)| *p == Phase::Train { fold: f }).map(|(_, i)| *i).collect();
        let evaluated: HashSet<usize> =
            reads.iter().filter(|(p, _)| *p == Phase::Eval { fold: f }).map(|(_, i)| *i).collect();
        assert!(trained.is_disjoint(&held), "fold {f} trained on held-out epochs");
        assert_eq!(evaluated, held);
        // class weights come from the training indices alone
        let labels: Vec<usize> = report.plan.train_indices(f).iter().map(|&i| ds.epochs()[i].label.class()).collect();
        assert_eq!(report.folds[f].class_weights, class_weights(&labels));
    }
}

#[test]
fn cross_validation_is_bit_reproducible_and_independent_of_jobs() {
    let ds = small_dataset(2);
    let init = GnnClassifier::new(desk_arch(), ds.layout(), 4).unwrap();
    let a = cross_validate(&ds, 3, &quick_cfg(8), &init, 1, None).unwrap();
    let b = cross_validate(&ds, 3, &quick_cfg(8), &init, 3, None).unwrap();
    assert_eq!(a.plan, b.plan);
    for (x, y) in a.folds.iter().zip(&b.folds) {
        assert_eq!(x.metrics, y.metrics);
        assert_eq!(x.history, y.history);
        assert_eq!(x.model.checksum(), y.model.checksum());
    }
}

#[test]
fn separable_channel_mean_is_learned() {
    // the label is the sign of channel 0's mean; everything else is noise
    let layout = ChannelLayout::standard_12();
    let mut r = rng(5);
    let epochs: Vec<TrialEpoch> = (0..120)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Success } else { Label::Failure };
            let offset = if label == Label::Success { 1.0 } else { -1.0 };
            let data = (0..12 * 64)
                .map(|k| r.random_range(-1.0..1.0) + if k < 64 { offset } else { 0.0 })
                .collect();
            TrialEpoch {
                signal: Tensor::new(vec![12, 64], data).unwrap(),
                label,
                participant: (i % 6) as u16,
                group: Group::FirstLeft,
                angular_error_deg: 0.0,
                block_index: 0,
                trial_index: 1,
            }
        })
        .collect();
    let ds = EpochDataset::new(epochs, 32.0, layout.clone()).unwrap();
    let init = GnnClassifier::new(desk_arch(), &layout, 1).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-2, epochs: 20, checkpoints: vec![], seed: 1, ..Default::default() };
    let report = cross_validate(&ds, 10, &cfg, &init, 1, None).unwrap();
    assert!(report.mean_accuracy() >= 0.95, "mean accuracy {}", report.mean_accuracy());
}

#[test]
fn pretraining_contract() {
    let mut spec = desk_spec(3);
    spec.n_participants = 2;
    spec.trials_per_participant = 10;
    let ds = synth(&spec);
    let target = ds.group(Group::FirstLeft);
    let source = ds.groups(&Group::FirstLeft.pretrain_sources(neurograph::data::PretrainScheme::Pocket));
    let init = GnnClassifier::new(desk_arch(), ds.layout(), 0).unwrap();

    let mut m = init.clone();
    let h = pretrain(&mut m, &source, &target, &TrainConfig { epochs: 0, ..quick_cfg(0) }).unwrap();
    assert!(h.records.is_empty());
    assert_eq!(m.checksum(), init.checksum());

    let h = pretrain(&mut m, &source, &target, &TrainConfig { epochs: 3, ..quick_cfg(0) }).unwrap();
    assert_eq!(h.records.len(), 3);
    assert!(h.records.iter().all(|r| r.loss.is_finite()));

    assert!(pretrain(&mut m, &target, &target, &quick_cfg(0)).is_err());
}
