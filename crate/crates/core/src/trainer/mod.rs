//! Adam with L2, participant-stratified folds, the training loop, pretraining
//! and cross-validation.

mod adam;
mod folds;
mod metrics;
mod train;

pub use adam::Adam;
pub use folds::{check_fold_plan, make_folds, FoldPlan};
pub use metrics::{evaluate, evaluate_indices, Metrics, MetricsSummary};
pub use train::{
    class_weights, cross_validate, pretrain, train_model, CheckpointHook, CrossValReport,
    FoldResult,
};

use std::io::Write;

use thiserror::Error;

use crate::data::{DataError, EpochDataset, Label};
use crate::model::ModelError;
use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in tensor `{0}`")]
    NanGradient(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("cannot make {k} folds from {n} epochs")]
    TooFewEpochs { k: usize, n: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("source and target overlap: {0}")]
    Overlap(String),
    #[error("empty dataset")]
    Empty,
    #[error("checkpoint hook failed: {0}")]
    Hook(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl TrainError {
    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NanGradient(_) | TrainError::NonFiniteLoss { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub dropout: f64,
    pub edge_dropout: f64,
    /// Epochs (1-based, after the update) at which checkpoint hooks fire.
    pub checkpoints: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 150,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            dropout: 0.35,
            edge_dropout: 0.2,
            checkpoints: vec![10, 20, 50, 150],
        }
    }
}

impl TrainConfig {
    pub fn pretraining() -> Self {
        Self {
            epochs: 200,
            ..Self::default()
        }
    }

    /// `epochs == 0` is accepted (a no-op run).
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning_rate and adam_eps must be positive, weight_decay nonnegative");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !((0.0..1.0).contains(&self.dropout) && (0.0..1.0).contains(&self.edge_dropout)) {
            return bad("dropout rates must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Which stage of which fold is requesting signal data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Pretrain,
    Train { fold: usize },
    Eval { fold: usize },
}

/// Indexed epoch source used by the training loop. Metadata (labels,
/// participants) may be read freely; signals are only requested through
/// [`EpochStore::batch`], which names the requesting phase.
pub trait EpochStore: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, i: usize) -> Label;
    fn participant(&self, i: usize) -> u16;
    /// `[N, C, T]` signals and class labels of `indices`.
    fn batch(&self, indices: &[usize], phase: Phase) -> (Tensor, Vec<usize>);
}

impl EpochStore for EpochDataset {
    fn len(&self) -> usize {
        EpochDataset::len(self)
    }
    fn label(&self, i: usize) -> Label {
        self.epochs()[i].label
    }
    fn participant(&self, i: usize) -> u16 {
        self.epochs()[i].participant
    }
    fn batch(&self, indices: &[usize], _phase: Phase) -> (Tensor, Vec<usize>) {
        EpochDataset::batch(self, indices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,train_acc")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.epoch, r.loss, r.train_acc)?;
        }
        Ok(())
    }
}
