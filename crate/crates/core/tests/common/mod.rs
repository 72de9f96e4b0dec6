//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use neurograph::data::{generate_synthetic, EpochDataset, Group, Label, SyntheticSpec, TrialEpoch};
use neurograph::graph::Channel;
use neurograph::nn::Tensor;
use neurograph::{ArchConfig, ChannelLayout, GnnClassifier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random layout with `c` channels scattered in a ball of radius 1 (never at the origin).
pub fn random_layout(c: usize, seed: u64) -> ChannelLayout {
    let mut r = rng(seed);
    let channels = (0..c)
        .map(|i| {
            let pos = loop {
                let p = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
                let n2: f64 = p.iter().map(|v: &f64| v * v).sum();
                if n2 <= 1.0 && n2 > 1e-4 {
                    break p;
                }
            };
            Channel { name: format!("ch{i}"), pos }
        })
        .collect();
    ChannelLayout::new(channels, None).unwrap()
}

/// All-pairs inverse-square adjacency straight from the positions.
pub fn brute_adjacency(layout: &ChannelLayout, fraction: f64) -> DMatrix<f64> {
    let ch = layout.channels();
    let n = ch.len();
    let cutoff = fraction * layout.head_radius();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let d2: f64 = (0..3).map(|k| (ch[i].pos[k] - ch[j].pos[k]).powi(2)).sum();
        if d2 > 0.0 && d2.sqrt() <= cutoff {
            1.0 / d2
        } else {
            0.0
        }
    })
}

/// Eval-mode forward written as plain loops over the model's parameters.
pub fn reference_forward(model: &GnnClassifier, batch: &Tensor) -> Vec<[f64; 2]> {
    let cfg = &model.config;
    let (n, c, t) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
    let (nf, k, pw) = (cfg.filters, cfg.kernel_size, cfg.pool_window);
    let tc = t - k + 1;
    let p = tc / pw;
    let w = model.conv.weight.value.data();
    let b = model.conv.bias.value.data();
    let (g, be) = (model.bn.gamma.value.data(), model.bn.beta.value.data());
    let (rm, rv) = (model.bn.running_mean.data(), model.bn.running_var.data());
    let slope = model.prelu.slope.value.data()[0];

    let a = brute_adjacency(model.layout(), cfg.radius_fraction);
    let mut lap = -a.clone();
    for i in 0..c {
        lap[(i, i)] = a.row(i).sum();
    }
    let lmax = SymmetricEigen::new(lap.clone()).eigenvalues.max();
    let lt = &lap * (2.0 / lmax) - DMatrix::<f64>::identity(c, c);

    let fin = nf * p;
    let theta = model.cheb.theta.value.data();
    let kk = cfg.cheb_order;
    let fo = cfg.cheb_out;
    let lw = model.linear.weight.value.data();
    let lb = model.linear.bias.value.data();
    let x = batch.data();
    let mut out = Vec::new();
    for s in 0..n {
        // temporal features, one row per node
        let mut h = DMatrix::<f64>::zeros(c, fin);
        for ch in 0..c {
            let xr = &x[(s * c + ch) * t..(s * c + ch + 1) * t];
            for f in 0..nf {
                for q in 0..p {
                    let mut acc = 0.0;
                    for u in q * pw..(q + 1) * pw {
                        let mut v = b[f];
                        for j in 0..k {
                            v += w[f * k + j] * xr[u + j];
                        }
                        v = (v - rm[f]) / (rv[f] + cfg.bn_eps).sqrt() * g[f] + be[f];
                        if v < 0.0 {
                            v *= slope;
                        }
                        acc += v;
                    }
                    h[(ch, f * p + q)] = acc / pw as f64;
                }
            }
        }
        let mut terms = vec![h.clone()];
        if kk > 1 {
            terms.push(&lt * &h);
        }
        for i in 2..kk {
            let next = &lt * &terms[i - 1] * 2.0 - &terms[i - 2];
            terms.push(next);
        }
        let mut y = DMatrix::<f64>::zeros(c, fo);
        for (i, z) in terms.iter().enumerate() {
            let th = DMatrix::from_fn(fin, fo, |r, q| theta[(i * fin + r) * fo + q]);
            y += z * th;
        }
        let pooled: Vec<f64> = (0..fo)
            .map(|q| (0..c).map(|ch| (1.0 + y[(ch, q)].exp()).ln()).sum::<f64>() / c as f64)
            .collect();
        let logit = |o: usize| lb[o] + (0..fo).map(|q| lw[o * fo + q] * pooled[q]).sum::<f64>();
        out.push([logit(0), logit(1)]);
    }
    out
}

/// Uniform random batch.
pub fn random_batch(n: usize, c: usize, t: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[n, c, t], 1.0, &mut rng(seed))
}

/// Small architecture used for gradient and oracle checks.
pub fn tiny_arch(n_times: usize) -> ArchConfig {
    ArchConfig {
        n_times,
        kernel_size: 4,
        filters: 3,
        cheb_out: 4,
        cheb_order: 3,
        pool_window: 4,
        dropout: 0.0,
        edge_dropout: 0.0,
        ..ArchConfig::default()
    }
}

/// Desk-scale architecture: 32 Hz, 2 s windows, 8 filters, 8 graph features.
pub fn desk_arch() -> ArchConfig {
    let mut arch = ArchConfig::for_sampling_rate(32.0, 2.0);
    arch.filters = 8;
    arch.cheb_out = 8;
    arch
}

pub fn desk_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::new(ChannelLayout::standard_12(), 32.0, 2.0, seed)
}

pub fn synth(spec: &SyntheticSpec) -> EpochDataset {
    generate_synthetic(spec).unwrap()
}

/// Rank of `x` among `all` with ties sharing the mean position, by counting.
pub fn counted_rank(x: f64, all: &[f64]) -> f64 {
    let below = all.iter().filter(|v| **v < x).count() as f64;
    let equal = all.iter().filter(|v| **v == x).count() as f64;
    below + (equal + 1.0) / 2.0
}

/// Mann-Whitney `U_a` by pair counting (ties count one half).
pub fn u_by_pairs(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Every subset of `0..n` of size `k`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Two-sided permutation p of Mann-Whitney: relabel the pooled values every possible way.
pub fn brute_mann_whitney(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let obs = u_by_pairs(a, b);
    let splits = subsets(pooled.len(), a.len());
    let extreme = splits
        .iter()
        .filter(|s| {
            let aa: Vec<f64> = s.iter().map(|&i| pooled[i]).collect();
            let bb: Vec<f64> = (0..pooled.len()).filter(|i| !s.contains(i)).map(|i| pooled[i]).collect();
            (u_by_pairs(&aa, &bb) - mu).abs() >= (obs - mu).abs() - 1e-9
        })
        .count();
    let ub = (a.len() * b.len()) as f64 - obs;
    (obs.min(ub), extreme as f64 / splits.len() as f64)
}

/// Two-sided sign-flip p of the Wilcoxon signed-rank test; `None` when every difference is zero.
pub fn brute_wilcoxon(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return None;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs.iter().map(|v| counted_rank(*v, &abs)).collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let mu = total / 2.0;
    let n = d.len();
    let mut extreme = 0usize;
    for signs in 0..(1usize << n) {
        let w: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - mu).abs() >= (w_plus - mu).abs() - 1e-9 {
            extreme += 1;
        }
    }
    Some((w_plus.min(total - w_plus), extreme as f64 / (1usize << n) as f64))
}

/// Weighted cross-entropy of a train-mode pass with every dropout off.
pub fn train_loss(model: &GnnClassifier, batch: &Tensor, labels: &[usize], w: [f64; 2]) -> f64 {
    let trace = model
        .forward_traced(batch, neurograph::Mode::Train, None, &mut rng(0))
        .unwrap();
    neurograph::nn::weighted_cross_entropy(&trace.logits, labels, w).unwrap().0
}

/// Largest relative error between backprop and central differences over every parameter.
pub fn full_model_grad_error(model: &GnnClassifier, batch: &Tensor, labels: &[usize], w: [f64; 2], eps: f64) -> f64 {
    let mut analytic = model.clone();
    analytic.forward(batch, neurograph::Mode::Train, &mut rng(0)).unwrap();
    analytic.backward(labels, w).unwrap();
    let grads: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    let n_params = grads.len();
    for pi in 0..n_params {
        for i in 0..grads[pi].len() {
            let orig = probe.params_mut()[pi].value.data()[i];
            probe.params_mut()[pi].value.data_mut()[i] = orig + eps;
            let up = train_loss(&probe, batch, labels, w);
            probe.params_mut()[pi].value.data_mut()[i] = orig - eps;
            let down = train_loss(&probe, batch, labels, w);
            probe.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(neurograph::nn::relative_error(grads[pi][i], numeric));
        }
    }
    worst
}

/// Random trials with funnel-consistent labels across two groups.
pub fn random_trials(seed: u64, n: usize) -> EpochDataset {
    let mut r = rng(seed);
    let layout = ChannelLayout::from_names(&["C3", "C4"]).unwrap();
    let epochs = (0..n)
        .map(|i| {
            let err: f64 = r.random_range(-15.0..15.0);
            TrialEpoch {
                signal: Tensor::new(vec![2, 4], (0..8).map(|k| (i * 8 + k) as f64).collect()).unwrap(),
                label: if err.abs() <= 3.0 { Label::Success } else { Label::Failure },
                participant: r.random_range(0..4),
                group: if r.random_bool(0.5) { Group::FirstLeft } else { Group::SecondRight },
                angular_error_deg: err,
                block_index: (i / 10) as u16,
                trial_index: (i % 10) as u16,
            }
        })
        .collect();
    EpochDataset::new(epochs, 2.0, layout).unwrap()
}
