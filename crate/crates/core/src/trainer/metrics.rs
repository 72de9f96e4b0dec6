use super::{EpochStore, Phase, TrainError};
use crate::model::GnnClassifier;

/// Binary classification metrics with success as the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`, class 0 = failure, 1 = success.
    pub confusion: [[usize; 2]; 2],
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl Metrics {
    pub fn from_confusion(confusion: [[usize; 2]; 2]) -> Self {
        let [[tn, fp], [fne, tp]] = confusion.map(|r| r.map(|v| v as f64));
        let total = tn + fp + fne + tp;
        let ratio = |num: f64, den: f64| {
            if den > 0.0 {
                (num / den, false)
            } else {
                (0.0, true)
            }
        };
        let (accuracy, _) = ratio(tp + tn, total);
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fne);
        let (f1, f1_undefined) = ratio(2.0 * precision * recall, precision + recall);
        Self {
            accuracy,
            precision,
            recall,
            f1,
            confusion,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Self {
        let mut confusion = [[0; 2]; 2];
        for (&y, &p) in labels.iter().zip(predictions) {
            confusion[y][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// `[accuracy, precision, recall, f1]`
    pub fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

/// Mean and sample standard deviation of fold metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    /// `[accuracy, precision, recall, f1]`
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl MetricsSummary {
    pub fn of(metrics: &[Metrics]) -> Self {
        let n = metrics.len() as f64;
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for j in 0..4 {
            mean[j] = metrics.iter().map(|m| m.as_array()[j]).sum::<f64>() / n;
            if metrics.len() > 1 {
                let ss: f64 = metrics
                    .iter()
                    .map(|m| (m.as_array()[j] - mean[j]).powi(2))
                    .sum();
                std[j] = (ss / (n - 1.0)).sqrt();
            }
        }
        Self { mean, std }
    }
}

const EVAL_CHUNK: usize = 64;

/// Eval-mode metrics of `model` on the given epochs.
pub fn evaluate_indices<S: EpochStore + ?Sized>(
    model: &GnnClassifier,
    store: &S,
    indices: &[usize],
    phase: Phase,
) -> Result<Metrics, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut labels = Vec::with_capacity(indices.len());
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = store.batch(chunk, phase);
        let logits = model.predict(&x)?;
        predictions.extend(logits.data().chunks(2).map(|r| usize::from(r[1] > r[0])));
        labels.extend(y);
    }
    Ok(Metrics::from_predictions(&labels, &predictions))
}

/// Eval-mode metrics on every epoch of `store`.
pub fn evaluate<S: EpochStore + ?Sized>(
    model: &GnnClassifier,
    store: &S,
) -> Result<Metrics, TrainError> {
    let all: Vec<usize> = (0..store.len()).collect();
    evaluate_indices(model, store, &all, Phase::Eval { fold: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_confusion() {
        let m = Metrics::from_confusion([[3, 1], [2, 4]]);
        assert!((m.accuracy - 0.7).abs() < 1e-15);
        assert!((m.precision - 0.8).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 * 0.8 * (2.0 / 3.0) / (0.8 + 2.0 / 3.0)).abs() < 1e-15);
        assert!((m.f1 - 0.727).abs() < 1e-3);
        assert_eq!(m.total(), 10);
    }

    #[test]
    fn perfect_and_degenerate_predictors() {
        let labels = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1];
        let m = Metrics::from_predictions(&labels, &labels);
        assert_eq!(m.as_array(), [1.0; 4]);

        let all_fail = Metrics::from_predictions(&labels, &[0; 10]);
        assert_eq!(all_fail.recall, 0.0);
        assert!(all_fail.precision_undefined && all_fail.f1_undefined);
        let all_success = Metrics::from_predictions(&labels, &[1; 10]);
        assert_eq!(all_success.recall, 1.0);
        assert!(!all_success.f1_undefined);
    }

    #[test]
    fn summary_statistics() {
        let a = Metrics::from_confusion([[1, 0], [0, 1]]);
        let b = Metrics::from_confusion([[0, 1], [1, 0]]);
        let s = MetricsSummary::of(&[a, b]);
        assert_eq!(s.mean[0], 0.5);
        assert!((s.std[0] - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
