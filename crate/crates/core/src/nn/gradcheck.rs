use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Layer, NnError, Tensor};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `input[i]` or `<param name>[i]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is zero are judged on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks a layer's input and parameter gradients against central differences
/// of the scalar objective `Σ r ⊙ layer(x)`, where `r` is a random projection
/// drawn from `rng`. The layer must be deterministic.
pub fn grad_check<L: Layer + ?Sized, R: Rng + ?Sized>(
    layer: &mut L,
    input: &Tensor,
    eps: f64,
    rng: &mut R,
) -> Result<GradCheckReport, NnError> {
    let out = layer.forward(input)?;
    let scale = 1.0 / (out.len() as f64).sqrt();
    let proj: Vec<f64> = (0..out.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    let proj = Tensor::new(out.shape().to_vec(), proj)?;
    let objective = |layer: &L, x: &Tensor| -> Result<f64, NnError> {
        let y = layer.forward(x)?;
        Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(input, &proj)?;
    let analytic_params: Vec<(String, Vec<f64>)> = layer
        .params_mut()
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, analytic: f64, numeric: f64| {
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = name;
        }
    };

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let fp = objective(layer, &x)?;
        x.data_mut()[i] = orig - eps;
        let fm = objective(layer, &x)?;
        x.data_mut()[i] = orig;
        record(format!("input[{i}]"), dx.data()[i], (fp - fm) / (2.0 * eps));
    }

    for (pi, (name, analytic)) in analytic_params.iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let orig = layer.params_mut()[pi].value.data()[i];
            layer.params_mut()[pi].value.data_mut()[i] = orig + eps;
            let fp = objective(layer, input)?;
            layer.params_mut()[pi].value.data_mut()[i] = orig - eps;
            let fm = objective(layer, input)?;
            layer.params_mut()[pi].value.data_mut()[i] = orig;
            record(format!("{name}[{i}]"), a, (fp - fm) / (2.0 * eps));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_adjacency, spectral_bundle, Channel, ChannelLayout};
    use crate::nn::{
        AvgPool, BatchNorm, ChebConv, ChebConvOn, GlobalAvgPool, Linear, PRelu, Softplus,
        TemporalConv, TrainModeBatchNorm,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> nalgebra::DMatrix<f64> {
        let channels = (0..n)
            .map(|i| Channel {
                name: format!("n{i}"),
                pos: [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.1..1.0),
                ],
            })
            .collect();
        let layout = ChannelLayout::new(channels, None).unwrap();
        spectral_bundle(&build_adjacency(&layout, 1.0).unwrap())
            .unwrap()
            .rescaled
    }

    #[test]
    fn temporal_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = TemporalConv::new(4, 8, &mut rng);
        conv.bias.value = Tensor::uniform(&[4], 0.5, &mut rng);
        let x = Tensor::uniform(&[3, 64], 1.0, &mut rng);
        let r = grad_check(&mut conv, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn cheb_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rescaled = random_graph(5, &mut rng);
        let mut layer = ChebConvOn {
            conv: ChebConv::new(3, 4, 3, &mut rng),
            rescaled,
        };
        let x = Tensor::uniform(&[2, 5, 4], 1.0, &mut rng);
        let r = grad_check(&mut layer, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut lin = Linear::new(6, 2, &mut rng);
        let x = Tensor::uniform(&[4, 6], 1.0, &mut rng);
        let r = grad_check(&mut lin, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn batch_norm_gradients_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut bn = BatchNorm::new(3, 1e-5, 0.1);
        bn.gamma.value = Tensor::uniform(&[3], 1.0, &mut rng).map(|v| v + 1.5);
        bn.beta.value = Tensor::uniform(&[3], 1.0, &mut rng);
        bn.running_mean = Tensor::uniform(&[3], 0.5, &mut rng);
        bn.running_var = Tensor::uniform(&[3], 0.5, &mut rng).map(|v| v + 1.0);
        let x = Tensor::uniform(&[4, 3, 7], 2.0, &mut rng);
        let r = grad_check(&mut bn, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "eval {r:?}");
        let mut train = TrainModeBatchNorm(bn);
        let r = grad_check(&mut train, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "train {r:?}");
    }

    #[test]
    fn elementwise_and_pooling_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        // keep inputs away from the PReLU kink
        let x =
            Tensor::uniform(&[2, 3, 10], 1.0, &mut rng)
                .map(|v| if v.abs() < 0.01 { 0.5 } else { v });
        let r = grad_check(&mut PRelu::new(0.25), &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "prelu {r:?}");
        let r = grad_check(&mut Softplus, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "softplus {r:?}");
        let r = grad_check(&mut AvgPool { window: 4 }, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "avgpool {r:?}");
        let r = grad_check(&mut GlobalAvgPool, &x, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "global pool {r:?}");
    }
}
