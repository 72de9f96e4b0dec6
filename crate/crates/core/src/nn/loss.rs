use super::{NnError, Tensor};

/// Class-weighted softmax cross-entropy over `[N, 2]` logits.
///
/// The loss is `Σ_n w[y_n]·(-log p_n[y_n]) / Σ_n w[y_n]`; when the weight sum is
/// zero the loss and its gradient are both zero. Returns the loss and
/// `d loss / d logits`.
pub fn weighted_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    class_weights: [f64; 2],
) -> Result<(f64, Tensor), NnError> {
    logits.expect_rank(2, "cross_entropy")?;
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    if n == 0 || labels.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    logits.expect_shape(&[labels.len(), 2], "cross_entropy")?;
    if class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(NnError::BadClassWeights(class_weights));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(NnError::BadLabel(bad));
    }
    let total_weight: f64 = labels.iter().map(|&y| class_weights[y]).sum();
    let mut grad = Tensor::zeros(logits.shape());
    if total_weight == 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    let g = grad.data_mut();
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits.data()[s * classes..(s + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = class_weights[y] / total_weight;
        loss += w * (log_z - row[y]);
        for c in 0..classes {
            let p = (row[c] - log_z).exp();
            g[s * classes + c] = w * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log2() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (loss, _) = weighted_cross_entropy(&logits, &[0], [1.0, 1.0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_prediction() {
        let logits = Tensor::new(vec![1, 2], vec![20.0, -20.0]).unwrap();
        let (loss, _) = weighted_cross_entropy(&logits, &[0], [1.0, 1.0]).unwrap();
        assert!(loss < 1e-8);
    }

    #[test]
    fn zero_weight_annihilates() {
        let logits = Tensor::new(vec![2, 2], vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let (loss, grad) = weighted_cross_entropy(&logits, &[1, 1], [1.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let empty = Tensor::zeros(&[0, 2]);
        assert_eq!(
            weighted_cross_entropy(&empty, &[], [1.0, 1.0]).unwrap_err(),
            NnError::EmptyBatch
        );
        let logits = Tensor::zeros(&[1, 2]);
        assert!(weighted_cross_entropy(&logits, &[2], [1.0, 1.0]).is_err());
        assert!(weighted_cross_entropy(&logits, &[0], [-1.0, 1.0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 16;
        let logits = Tensor::new(
            vec![n, 2],
            (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let weights = [0.7, 1.9];
        let (_, grad) = weighted_cross_entropy(&logits, &labels, weights).unwrap();
        let h = 1e-5;
        for i in 0..2 * n {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let fp = weighted_cross_entropy(&plus, &labels, weights).unwrap().0;
            let fm = weighted_cross_entropy(&minus, &labels, weights).unwrap().0;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grad.data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel < 1e-4, "entry {i}: {analytic} vs {numeric}");
        }
    }
}
