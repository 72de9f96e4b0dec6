//! The end-to-end classifier: raw `[N, C, T]` epochs to two-class logits.
//!
//! Layer order: temporal conv, batch norm, PReLU, average pool, dropout,
//! Chebyshev graph conv, softplus, global average pool over nodes, linear.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{
    build_adjacency, edge_dropout, laplacian, rescale_laplacian, spectral_bundle, ChannelLayout,
    GraphError, SpectralBundle, WeightedGraph,
};
use crate::nn::{
    avg_pool, avg_pool_backward, dropout_mask, global_avg_pool, global_avg_pool_backward, softplus,
    softplus_backward, weighted_cross_entropy, BatchNorm, BnCache, ChebConv, Linear, NnError,
    PRelu, Param, TemporalConv, Tensor,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("batch has {got} channels, model graph has {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("batch has {got} time samples, model expects {expected}")]
    TimeMismatch { expected: usize, got: usize },
    #[error("batch must be [N, C, T], got shape {0:?}")]
    BadBatch(Vec<usize>),
    #[error("backward called without a preceding train-mode forward")]
    NoTrace,
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Temporal kernel length for a sampling rate: `fs/2` rounded to the nearest even integer.
pub fn kernel_size_for(fs: f64) -> usize {
    ((fs / 4.0).round() as usize * 2).max(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Samples per epoch (`T`).
    pub n_times: usize,
    pub kernel_size: usize,
    pub filters: usize,
    pub cheb_out: usize,
    pub cheb_order: usize,
    pub pool_window: usize,
    pub dropout: f64,
    pub edge_dropout: f64,
    pub radius_fraction: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub prelu_init: f64,
    /// Use running statistics in train mode and stop updating them.
    pub freeze_batchnorm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::for_sampling_rate(256.0, 2.0)
    }
}

impl ArchConfig {
    pub fn for_sampling_rate(fs: f64, window_seconds: f64) -> Self {
        Self {
            n_times: (fs * window_seconds).round() as usize,
            kernel_size: kernel_size_for(fs),
            filters: 32,
            cheb_out: 16,
            cheb_order: 3,
            pool_window: 4,
            dropout: 0.35,
            edge_dropout: 0.2,
            radius_fraction: 0.75,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            prelu_init: 0.25,
            freeze_batchnorm: false,
        }
    }

    pub fn conv_len(&self) -> usize {
        self.n_times + 1 - self.kernel_size
    }

    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool_window
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.kernel_size == 0 || self.n_times < self.kernel_size {
            return bad("n_times must be at least kernel_size >= 1");
        }
        if self.filters == 0 || self.cheb_out == 0 || self.cheb_order == 0 {
            return bad("filters, cheb_out and cheb_order must be positive");
        }
        if self.pool_window == 0 || self.pooled_len() == 0 {
            return bad("pool window must be positive and no longer than the conv output");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.edge_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if !(self.radius_fraction > 0.0 && self.radius_fraction <= 1.0) {
            return bad("radius_fraction must lie in (0, 1]");
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be positive and bn_momentum in [0, 1]");
        }
        Ok(())
    }
}

/// Intermediates of one forward pass, enough for a single backward sweep.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    n: usize,
    c: usize,
    input: Tensor,
    conv_out: Tensor,
    bn_cache: Option<BnCache>,
    bn_out: Tensor,
    act_shape: Vec<usize>,
    drop_mask: Option<Vec<f64>>,
    cheb_in: Tensor,
    rescaled: DMatrix<f64>,
    cheb_out: Tensor,
    pooled_nodes_shape: Vec<usize>,
    head_in: Tensor,
    pub logits: Tensor,
}

/// Gradients with respect to the model inputs, when requested.
#[derive(Debug, Clone)]
pub struct InputGrads {
    /// `[N, C, T]`
    pub input: Option<Tensor>,
    /// Gradient with respect to the rescaled Laplacian used in the pass.
    pub rescaled: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct GnnClassifier {
    pub config: ArchConfig,
    graph: WeightedGraph,
    spectral: SpectralBundle,
    pub conv: TemporalConv,
    pub bn: BatchNorm,
    pub prelu: PRelu,
    pub cheb: ChebConv,
    pub linear: Linear,
    trace: Option<ForwardTrace>,
}

impl GnnClassifier {
    /// Builds the channel graph from `layout` and initializes weights from `seed`.
    pub fn new(config: ArchConfig, layout: &ChannelLayout, seed: u64) -> Result<Self, ModelError> {
        let graph = build_adjacency(layout, config.radius_fraction)?;
        Self::with_graph(config, graph, seed)
    }

    pub fn with_graph(
        config: ArchConfig,
        graph: WeightedGraph,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let spectral = spectral_bundle(&graph)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = TemporalConv::new(config.filters, config.kernel_size, &mut rng);
        let bn = BatchNorm::new(config.filters, config.bn_eps, config.bn_momentum);
        let prelu = PRelu::new(config.prelu_init);
        let cheb = ChebConv::new(
            config.cheb_order,
            config.filters * config.pooled_len(),
            config.cheb_out,
            &mut rng,
        );
        let linear = Linear::new(config.cheb_out, 2, &mut rng);
        Ok(Self {
            config,
            graph,
            spectral,
            conv,
            bn,
            prelu,
            cheb,
            linear,
            trace: None,
        })
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn layout(&self) -> &ChannelLayout {
        self.graph.layout()
    }

    pub fn spectral(&self) -> &SpectralBundle {
        &self.spectral
    }

    pub fn n_channels(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![
            &self.conv.weight,
            &self.conv.bias,
            &self.bn.gamma,
            &self.bn.beta,
            &self.prelu.slope,
            &self.cheb.theta,
            &self.linear.weight,
            &self.linear.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv.weight,
            &mut self.conv.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.prelu.slope,
            &mut self.cheb.theta,
            &mut self.linear.weight,
            &mut self.linear.bias,
        ]
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Every persistent tensor (parameters, then batch-norm running statistics).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        out.push(("bn.running_mean".into(), &self.bn.running_mean));
        out.push(("bn.running_var".into(), &self.bn.running_var));
        out
    }

    pub fn set_tensor(&mut self, name: &str, value: Tensor) -> Result<(), ModelError> {
        let slot = match name {
            "bn.running_mean" => &mut self.bn.running_mean,
            "bn.running_var" => &mut self.bn.running_var,
            _ => {
                let p = self
                    .params_mut()
                    .into_iter()
                    .find(|p| p.name == name)
                    .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?;
                &mut p.value
            }
        };
        value.expect_shape(slot.shape(), "set_tensor")?;
        *slot = value;
        Ok(())
    }

    /// Order-sensitive checksum of every persistent tensor's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in self.named_tensors() {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for v in t.data() {
                h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    /// The same model over a relabeled channel set (`order[k]` = old index of new channel `k`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self, ModelError> {
        let mut out = self.clone();
        out.graph = self.graph.permuted(order);
        out.spectral = spectral_bundle(&out.graph)?;
        out.trace = None;
        Ok(out)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(usize, usize, usize), ModelError> {
        if batch.shape().len() != 3 {
            return Err(ModelError::BadBatch(batch.shape().to_vec()));
        }
        let (n, c, t) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
        if c != self.n_channels() {
            return Err(ModelError::ChannelMismatch {
                expected: self.n_channels(),
                got: c,
            });
        }
        if t != self.config.n_times {
            return Err(ModelError::TimeMismatch {
                expected: self.config.n_times,
                got: t,
            });
        }
        if n == 0 {
            return Err(NnError::EmptyBatch.into());
        }
        Ok((n, c, t))
    }

    /// Rescaled Laplacian of an arbitrary adjacency over this model's nodes,
    /// normalized by the base graph's `λmax`. Edge dropout and masks only
    /// shrink weights, so the spectrum stays inside `[-1, 1]`.
    pub fn rescaled_for(&self, adjacency: &DMatrix<f64>) -> DMatrix<f64> {
        rescale_laplacian(&laplacian(adjacency), self.spectral.lambda_max)
    }

    /// Forward pass recording intermediates. `rescaled` overrides the graph operator;
    /// `rng` drives dropout and edge dropout in train mode.
    pub fn forward_traced<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        mode: Mode,
        rescaled: Option<&DMatrix<f64>>,
        rng: &mut R,
    ) -> Result<ForwardTrace, ModelError> {
        let (n, c, t) = self.check_batch(batch)?;
        let train = mode == Mode::Train;
        let input = batch.clone().reshape(&[n * c, t])?;
        let conv_out = self.conv.forward(&input)?;
        let (bn_out, bn_cache) = if train && !self.config.freeze_batchnorm {
            let (out, cache) = self.bn.forward_train(&conv_out)?;
            (out, Some(cache))
        } else {
            (self.bn.forward_eval(&conv_out)?, None)
        };
        let act = self.prelu.forward(&bn_out);
        let act_shape = act.shape().to_vec();
        let mut pooled = avg_pool(&act, self.config.pool_window);
        let drop_mask = if train && self.config.dropout > 0.0 {
            let mask = dropout_mask(pooled.len(), self.config.dropout, rng);
            pooled
                .data_mut()
                .iter_mut()
                .zip(&mask)
                .for_each(|(v, m)| *v *= m);
            Some(mask)
        } else {
            None
        };
        let fin = self.config.filters * self.config.pooled_len();
        let cheb_in = pooled.reshape(&[n, c, fin])?;
        let rescaled = match rescaled {
            Some(r) => r.clone(),
            None if train && self.config.edge_dropout > 0.0 => {
                let dropped = edge_dropout(&self.graph, self.config.edge_dropout, rng)?;
                self.rescaled_for(dropped.adjacency())
            }
            None => self.spectral.rescaled.clone(),
        };
        let cheb_out = self.cheb.forward(&cheb_in, &rescaled)?;
        let activated = cheb_out.map(softplus);
        let pooled_nodes_shape = activated.shape().to_vec();
        let head_in = global_avg_pool(&activated)?;
        let logits = self.linear.forward(&head_in)?;
        Ok(ForwardTrace {
            n,
            c,
            input,
            conv_out,
            bn_cache,
            bn_out,
            act_shape,
            drop_mask,
            cheb_in,
            rescaled,
            cheb_out,
            pooled_nodes_shape,
            head_in,
            logits,
        })
    }

    /// Backpropagates `dlogits` through a trace, accumulating parameter gradients.
    pub fn backward_traced(
        &mut self,
        trace: &ForwardTrace,
        dlogits: &Tensor,
        want_input: bool,
        want_rescaled: bool,
    ) -> Result<InputGrads, ModelError> {
        let dhead = self.linear.backward_acc(&trace.head_in, dlogits)?;
        let mut dcheb = global_avg_pool_backward(&trace.pooled_nodes_shape, &dhead);
        for (g, &x) in dcheb.data_mut().iter_mut().zip(trace.cheb_out.data()) {
            *g *= softplus_backward(x);
        }
        let (dh1, drescaled) = self.cheb.backward_full(
            &trace.cheb_in,
            &trace.rescaled,
            &dcheb,
            true,
            want_rescaled,
        )?;
        let p = self.config.pooled_len();
        let mut dpooled =
            dh1.expect("requested")
                .reshape(&[trace.n * trace.c, self.config.filters, p])?;
        if let Some(mask) = &trace.drop_mask {
            dpooled
                .data_mut()
                .iter_mut()
                .zip(mask)
                .for_each(|(g, m)| *g *= m);
        }
        let dact = avg_pool_backward(&trace.act_shape, &dpooled, self.config.pool_window);
        let dbn = self.prelu.backward_acc(&trace.bn_out, &dact);
        let dconv = match &trace.bn_cache {
            Some(cache) => self.bn.backward_train(cache, &dbn)?,
            None => self.bn.backward_eval(&trace.conv_out, &dbn)?,
        };
        let dinput = self.conv.backward_opt(&trace.input, &dconv, want_input)?;
        let dinput = dinput
            .map(|d| d.reshape(&[trace.n, trace.c, self.config.n_times]))
            .transpose()?;
        Ok(InputGrads {
            input: dinput,
            rescaled: drescaled,
        })
    }

    /// Forward pass. Train mode applies dropout and edge dropout, updates batch-norm
    /// running statistics and records a trace for [`GnnClassifier::backward`].
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor, ModelError> {
        match mode {
            Mode::Eval => {
                self.trace = None;
                self.predict(batch)
            }
            Mode::Train => {
                let trace = self.forward_traced(batch, mode, None, rng)?;
                if let Some(cache) = &trace.bn_cache {
                    self.bn.update_running(cache);
                }
                let logits = trace.logits.clone();
                self.trace = Some(trace);
                Ok(logits)
            }
        }
    }

    /// Deterministic eval-mode logits; does not touch the model.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self
            .forward_traced(batch, Mode::Eval, None, &mut unused)?
            .logits)
    }

    /// Class-weighted cross-entropy of the last train-mode forward; fills every
    /// gradient buffer (previous contents are discarded) and returns the loss.
    pub fn backward(
        &mut self,
        labels: &[usize],
        class_weights: [f64; 2],
    ) -> Result<f64, ModelError> {
        let trace = self.trace.take().ok_or(ModelError::NoTrace)?;
        let (loss, dlogits) = weighted_cross_entropy(&trace.logits, labels, class_weights)?;
        self.zero_grad();
        self.backward_traced(&trace, &dlogits, false, false)?;
        Ok(loss)
    }
}
