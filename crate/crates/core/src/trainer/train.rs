use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    evaluate_indices, make_folds, Adam, EpochRecord, EpochStore, FoldPlan, History, Metrics,
    MetricsSummary, Phase, TrainConfig, TrainError,
};
use crate::data::EpochDataset;
use crate::model::{GnnClassifier, Mode};

/// Called as `(fold, epoch, model)` at each configured checkpoint epoch.
pub type CheckpointHook<'a> =
    &'a (dyn Fn(usize, usize, &GnnClassifier) -> Result<(), String> + Sync);

/// Inverse-frequency weights `N / (2 · count_c)`; an absent class gets weight 0.
pub fn class_weights(labels: &[usize]) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts.map(|c| if c == 0 { 0.0 } else { n / (2.0 * c as f64) })
}

/// Splits a shuffled order into batches, folding a trailing singleton into the
/// previous batch (train-mode batch norm needs two rows).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("nonempty") = &order[start..];
    }
    out
}

/// Trains `model` on `indices` for `cfg.epochs` epochs, reshuffling every epoch.
/// `on_epoch(epoch, model)` runs after each epoch's last update.
pub fn train_model<S: EpochStore + ?Sized>(
    model: &mut GnnClassifier,
    store: &S,
    indices: &[usize],
    cfg: &TrainConfig,
    phase: Phase,
    rng: &mut ChaCha8Rng,
    on_epoch: &mut dyn FnMut(usize, &GnnClassifier) -> Result<(), String>,
) -> Result<History, TrainError> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(TrainError::Empty);
    }
    model.config.dropout = cfg.dropout;
    model.config.edge_dropout = cfg.edge_dropout;
    let labels: Vec<usize> = indices.iter().map(|&i| store.label(i).class()).collect();
    let weights = class_weights(&labels);
    let mut adam = Adam::from_config(cfg);
    let mut history = History::default();
    let mut order = indices.to_vec();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in batches(&order, cfg.batch_size) {
            let (x, y) = store.batch(batch, phase);
            let logits = model.forward(&x, Mode::Train, rng)?;
            let loss = model.backward(&y, weights)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            adam.step(model.params_mut())?;
            loss_sum += loss * batch.len() as f64;
            correct += logits
                .data()
                .chunks(2)
                .zip(&y)
                .filter(|(r, &t)| usize::from(r[1] > r[0]) == t)
                .count();
        }
        let n = order.len() as f64;
        history.records.push(EpochRecord {
            epoch,
            loss: loss_sum / n,
            train_acc: correct as f64 / n,
        });
        on_epoch(epoch, model).map_err(TrainError::Hook)?;
    }
    Ok(history)
}

/// Trains `model` on every epoch of `source` with seed `cfg.seed`. Rejects a
/// source that shares participants or groups with `target`.
pub fn pretrain(
    model: &mut GnnClassifier,
    source: &EpochDataset,
    target: &EpochDataset,
    cfg: &TrainConfig,
) -> Result<History, TrainError> {
    let src: BTreeSet<u16> = source.participants().into_iter().collect();
    let shared: Vec<u16> = target
        .participants()
        .into_iter()
        .filter(|p| src.contains(p))
        .collect();
    if !shared.is_empty() {
        return Err(TrainError::Overlap(format!("participants {shared:?}")));
    }
    let src_groups: BTreeSet<_> = source.epochs().iter().map(|e| e.group).collect();
    if let Some(g) = target
        .epochs()
        .iter()
        .map(|e| e.group)
        .find(|g| src_groups.contains(g))
    {
        return Err(TrainError::Overlap(format!("group {g}")));
    }
    if cfg.epochs == 0 {
        return Ok(History::default());
    }
    let all: Vec<usize> = (0..source.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_model(
        model,
        source,
        &all,
        cfg,
        Phase::Pretrain,
        &mut rng,
        &mut |_, _| Ok(()),
    )
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub history: History,
    pub class_weights: [f64; 2],
    pub train_size: usize,
    pub model: GnnClassifier,
}

#[derive(Debug, Clone)]
pub struct CrossValReport {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub summary: MetricsSummary,
}

impl CrossValReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.summary.mean[0]
    }
}

/// `k`-fold cross-validation. Every fold starts from a clone of `init`, trains on
/// the other folds with seed `cfg.seed ^ fold` and is scored on its held-out
/// epochs with final-epoch parameters. `jobs > 1` runs folds on a thread pool;
/// results do not depend on `jobs`.
pub fn cross_validate<S: EpochStore + ?Sized>(
    store: &S,
    k: usize,
    cfg: &TrainConfig,
    init: &GnnClassifier,
    jobs: usize,
    hook: Option<CheckpointHook<'_>>,
) -> Result<CrossValReport, TrainError> {
    cfg.validate()?;
    let plan = make_folds(store, k, cfg.seed)?;
    let run = |fold: usize| -> Result<FoldResult, TrainError> {
        let mut model = init.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fold as u64);
        let train = plan.train_indices(fold);
        let labels: Vec<usize> = train.iter().map(|&i| store.label(i).class()).collect();
        let mut on_epoch = |epoch: usize, m: &GnnClassifier| match hook {
            Some(h) if cfg.checkpoints.contains(&epoch) => h(fold, epoch, m),
            _ => Ok(()),
        };
        let history = train_model(
            &mut model,
            store,
            &train,
            cfg,
            Phase::Train { fold },
            &mut rng,
            &mut on_epoch,
        )?;
        let metrics = evaluate_indices(&model, store, &plan.folds[fold], Phase::Eval { fold })?;
        log::info!("fold {fold}: accuracy {:.3}", metrics.accuracy);
        Ok(FoldResult {
            fold,
            metrics,
            history,
            class_weights: class_weights(&labels),
            train_size: train.len(),
            model,
        })
    };
    let folds: Vec<FoldResult> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..k).into_par_iter().map(run).collect::<Result<_, _>>())?
    } else {
        (0..k).map(run).collect::<Result<_, _>>()?
    };
    let summary = MetricsSummary::of(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(CrossValReport {
        plan,
        folds,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_frequency_weights() {
        assert_eq!(class_weights(&[0, 0, 0, 1]), [4.0 / 6.0, 2.0]);
        assert_eq!(class_weights(&[1, 1]), [0.0, 0.5]);
    }

    #[test]
    fn constant_predictor_loss_is_class_independent() {
        // Weighted mean of -log p over a batch where the predictor puts mass q on one class.
        let labels = [0, 0, 0, 0, 0, 1, 1];
        let w = class_weights(&labels);
        let loss_predicting = |class: usize| {
            let q: f64 = 0.8;
            let (mut num, mut den) = (0.0, 0.0);
            for &y in &labels {
                let p = if y == class { q } else { 1.0 - q };
                num += w[y] * -p.ln();
                den += w[y];
            }
            num / den
        };
        assert!((loss_predicting(0) - loss_predicting(1)).abs() < 1e-12);
    }

    #[test]
    fn batching_merges_trailing_singleton() {
        let order: Vec<usize> = (0..65).collect();
        let b = batches(&order, 32);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![32, 33]);
        let order: Vec<usize> = (0..66).collect();
        assert_eq!(batches(&order, 32).len(), 3);
        assert_eq!(batches(&order[..1], 32).len(), 1);
    }
}
