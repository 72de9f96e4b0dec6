//! Learnable node and edge masks over a frozen classifier, and the
//! standardized contribution maps derived from them.
//!
//! Node masks scale each channel's input signal. Edge masks scale the
//! adjacency weights (symmetrically) before the Laplacian is rebuilt; the
//! rescaling keeps the unmasked graph's `λmax`, so masking can only shrink
//! the operator's spectrum. The objective has five terms: cross-entropy
//! against reference labels, mean node and edge mask size, and mean node and
//! edge mask entropy.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::EpochDataset;
use crate::graph::{Channel, ChannelLayout, GraphError, WeightedGraph};
use crate::model::{GnnClassifier, Mode, ModelError};
use crate::nn::{weighted_cross_entropy, NnError, Param, Tensor};
use crate::trainer::{Adam, TrainError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("mask shape mismatch: {0}")]
    Shape(String),
    #[error("mask optimization diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        history: Vec<ExplainLossTerms>,
    },
    #[error("nothing to explain: empty dataset")]
    Empty,
    #[error("map csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const CLAMP: f64 = 1e-7;

/// Binary entropy of a mask value and its derivative, clamped to `[1e-7, 1 - 1e-7]`.
fn entropy(m: f64) -> (f64, f64) {
    let c = m.clamp(CLAMP, 1.0 - CLAMP);
    let h = -c * c.ln() - (1.0 - c) * (1.0 - c).ln();
    let dh = if m == c { ((1.0 - c) / c).ln() } else { 0.0 };
    (h, dh)
}

/// Mask logits for every node and every undirected edge of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub node: Param,
    pub edge: Param,
    /// `(i, j)` with `i < j`, aligned with `edge`.
    pub edges: Vec<(usize, usize)>,
}

impl MaskSet {
    /// Logits drawn from `N(0, std)`.
    pub fn random(graph: &WeightedGraph, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("nonnegative std");
        let edges = graph.edges();
        let node: Vec<f64> = (0..graph.n_nodes())
            .map(|_| normal.sample(&mut rng))
            .collect();
        let edge: Vec<f64> = (0..edges.len()).map(|_| normal.sample(&mut rng)).collect();
        Self::from_logits(node, edge, edges)
    }

    /// Infinite logits: every mask is exactly 1.
    pub fn identity(graph: &WeightedGraph) -> Self {
        let edges = graph.edges();
        Self::from_logits(
            vec![f64::INFINITY; graph.n_nodes()],
            vec![f64::INFINITY; edges.len()],
            edges,
        )
    }

    pub fn from_logits(node: Vec<f64>, edge: Vec<f64>, edges: Vec<(usize, usize)>) -> Self {
        let (nn, ne) = (node.len(), edge.len());
        Self {
            node: Param::new("mask.node", Tensor::new(vec![nn], node).expect("1-d")),
            edge: Param::new("mask.edge", Tensor::new(vec![ne], edge).expect("1-d")),
            edges,
        }
    }

    pub fn node_masks(&self) -> Vec<f64> {
        self.node.value.data().iter().map(|&x| sigmoid(x)).collect()
    }

    pub fn edge_masks(&self) -> Vec<f64> {
        self.edge.value.data().iter().map(|&x| sigmoid(x)).collect()
    }

    fn check(&self, model: &GnnClassifier) -> Result<(), ExplainError> {
        let c = model.n_channels();
        if self.node.value.len() != c {
            return Err(ExplainError::Shape(format!(
                "{} node masks for {c} channels",
                self.node.value.len()
            )));
        }
        if self.edges != model.graph().edges() || self.edge.value.len() != self.edges.len() {
            return Err(ExplainError::Shape(
                "edge masks do not match the model graph".into(),
            ));
        }
        if !(self
            .node
            .value
            .data()
            .iter()
            .chain(self.edge.value.data())
            .all(|v| !v.is_nan()))
        {
            return Err(ExplainError::Shape("mask logits contain NaN".into()));
        }
        Ok(())
    }

    fn masked_adjacency(&self, graph: &WeightedGraph) -> DMatrix<f64> {
        let mut a = graph.adjacency().clone();
        for (&(i, j), m) in self.edges.iter().zip(self.edge_masks()) {
            a[(i, j)] *= m;
            a[(j, i)] *= m;
        }
        a
    }
}

fn masked_input(batch: &Tensor, node_masks: &[f64]) -> Tensor {
    let (c, t) = (batch.shape()[1], batch.shape()[2]);
    let mut x = batch.clone();
    for (k, row) in x.data_mut().chunks_mut(t).enumerate() {
        let m = node_masks[k % c];
        row.iter_mut().for_each(|v| *v *= m);
    }
    x
}

/// Eval-mode logits of the frozen model with masked inputs and masked graph.
pub fn masked_forward(
    model: &GnnClassifier,
    masks: &MaskSet,
    batch: &Tensor,
) -> Result<Tensor, ExplainError> {
    masks.check(model)?;
    if batch.shape().len() != 3 {
        return Err(ModelError::BadBatch(batch.shape().to_vec()).into());
    }
    let x = masked_input(batch, &masks.node_masks());
    let rescaled = model.rescaled_for(&masks.masked_adjacency(model.graph()));
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    Ok(model
        .forward_traced(&x, Mode::Eval, Some(&rescaled), &mut unused)?
        .logits)
}

/// Loss coefficients, in the order classification, node size, edge size, node entropy, edge entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub ces: f64,
    pub nms: f64,
    pub ems: f64,
    pub nme: f64,
    pub eme: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Self {
            ces: 1.0,
            nms: 1.0,
            ems: 1.0,
            nme: 1.0,
            eme: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainLossTerms {
    /// Cross-entropy of masked logits against the reference labels.
    pub ces: f64,
    /// Mean node mask.
    pub nms: f64,
    /// Mean edge mask.
    pub ems: f64,
    /// Mean node mask entropy.
    pub nme: f64,
    /// Mean edge mask entropy.
    pub eme: f64,
    pub coefficients: Coefficients,
}

impl ExplainLossTerms {
    pub fn total(&self) -> f64 {
        let c = &self.coefficients;
        c.ces * self.ces + c.nms * self.nms + c.ems * self.ems + c.nme * self.nme + c.eme * self.eme
    }

    fn is_finite(&self) -> bool {
        [self.ces, self.nms, self.ems, self.nme, self.eme]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Evaluates the five loss terms.
pub fn explain_loss(
    masks: &MaskSet,
    masked_logits: &Tensor,
    reference_labels: &[usize],
    coefficients: Coefficients,
) -> Result<ExplainLossTerms, ExplainError> {
    let (ces, _) = weighted_cross_entropy(masked_logits, reference_labels, [1.0, 1.0])?;
    let (node, edge) = (masks.node_masks(), masks.edge_masks());
    let ent = |v: &[f64]| mean(&v.iter().map(|&m| entropy(m).0).collect::<Vec<_>>());
    Ok(ExplainLossTerms {
        ces,
        nms: mean(&node),
        ems: mean(&edge),
        nme: ent(&node),
        eme: ent(&edge),
        coefficients,
    })
}

/// Loss terms plus the gradient of the weighted total with respect to the mask logits
/// (written into `masks.node.grad` and `masks.edge.grad`). Model weights are untouched.
pub fn explain_gradients(
    model: &GnnClassifier,
    masks: &mut MaskSet,
    batch: &Tensor,
    reference_labels: &[usize],
    coefficients: Coefficients,
) -> Result<ExplainLossTerms, ExplainError> {
    masks.check(model)?;
    let node = masks.node_masks();
    let edge = masks.edge_masks();
    let x = masked_input(batch, &node);
    let rescaled = model.rescaled_for(&masks.masked_adjacency(model.graph()));
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let trace = model.forward_traced(&x, Mode::Eval, Some(&rescaled), &mut unused)?;
    let (ces, dlogits) = weighted_cross_entropy(&trace.logits, reference_labels, [1.0, 1.0])?;
    let dlogits = dlogits.map(|g| g * coefficients.ces);
    let mut scratch = model.clone();
    let grads = scratch.backward_traced(&trace, &dlogits, true, !masks.edges.is_empty())?;

    let (c, t) = (batch.shape()[1], batch.shape()[2]);
    let dx = grads.input.expect("requested");
    let mut dnode = vec![0.0; c];
    for (k, (xr, gr)) in batch.data().chunks(t).zip(dx.data().chunks(t)).enumerate() {
        dnode[k % c] += xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
    }

    let mut dedge = vec![0.0; masks.edges.len()];
    if let Some(dl) = grads.rescaled {
        let scale = 2.0 / model.spectral().lambda_max;
        let a = model.graph().adjacency();
        for (e, &(i, j)) in masks.edges.iter().enumerate() {
            let da = scale * (dl[(i, i)] + dl[(j, j)] - dl[(i, j)] - dl[(j, i)]);
            dedge[e] = da * a[(i, j)];
        }
    }

    let (nc, ne) = (node.len().max(1) as f64, edge.len().max(1) as f64);
    let finish = |masks: &[f64], dmask: &mut [f64], size: f64, ent: f64, n: f64| -> f64 {
        let mut h = 0.0;
        for (d, &m) in dmask.iter_mut().zip(masks) {
            let (hv, dh) = entropy(m);
            h += hv;
            *d = (*d + size / n + ent * dh / n) * m * (1.0 - m);
        }
        h / n
    };
    let nme = finish(&node, &mut dnode, coefficients.nms, coefficients.nme, nc);
    let eme = if edge.is_empty() {
        0.0
    } else {
        finish(&edge, &mut dedge, coefficients.ems, coefficients.eme, ne)
    };
    masks.node.grad = Tensor::new(vec![node.len()], dnode)?;
    masks.edge.grad = Tensor::new(vec![edge.len()], dedge)?;
    Ok(ExplainLossTerms {
        ces,
        nms: mean(&node),
        ems: mean(&edge),
        nme,
        eme,
        coefficients,
    })
}

/// What the classification term is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainTarget {
    /// The frozen model's own unmasked predictions.
    ModelPredictions,
    TrueLabels,
}

/// Logit used by [`MaskInit::Constant`]; every mask starts at `sigmoid(6) ≈ 0.998`.
pub const CONSTANT_INIT_LOGIT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskInit {
    /// Seeded `N(0, init_std)` logits.
    Random,
    /// Every logit equal to [`CONSTANT_INIT_LOGIT`] (near-identity masks).
    Constant,
}

impl MaskInit {
    pub fn name(self) -> &'static str {
        match self {
            MaskInit::Random => "random",
            MaskInit::Constant => "constant",
        }
    }
}

impl std::str::FromStr for MaskInit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(MaskInit::Random),
            "constant" => Ok(MaskInit::Constant),
            _ => Err(format!("unknown mask init `{s}` (random|constant)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    pub init: MaskInit,
    pub learning_rate: f64,
    pub epochs: usize,
    pub coefficients: Coefficients,
    pub init_std: f64,
    pub target: ExplainTarget,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            init: MaskInit::Random,
            learning_rate: 1e-2,
            epochs: 100,
            coefficients: Coefficients::default(),
            init_std: 0.1,
            target: ExplainTarget::ModelPredictions,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub masks: MaskSet,
    pub history: Vec<ExplainLossTerms>,
}

/// Argmax class of each logit row.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    logits
        .data()
        .chunks(2)
        .map(|r| usize::from(r[1] > r[0]))
        .collect()
}

/// Optimizes one mask set over every epoch of `ds` jointly (full batch) with Adam.
pub fn optimize_masks(
    model: &GnnClassifier,
    ds: &EpochDataset,
    cfg: &ExplainConfig,
) -> Result<Explanation, ExplainError> {
    if ds.is_empty() {
        return Err(ExplainError::Empty);
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let (batch, labels) = ds.batch(&all);
    let reference = match cfg.target {
        ExplainTarget::ModelPredictions => predictions(&model.predict(&batch)?),
        ExplainTarget::TrueLabels => labels,
    };
    let mut masks = match cfg.init {
        MaskInit::Random => MaskSet::random(model.graph(), cfg.init_std, cfg.seed),
        MaskInit::Constant => {
            let edges = model.graph().edges();
            MaskSet::from_logits(vec![CONSTANT_INIT_LOGIT; model.n_channels()], vec![CONSTANT_INIT_LOGIT; edges.len()], edges)
        }
    };
    let mut adam = Adam::new(cfg.learning_rate, 0.0);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let terms = explain_gradients(model, &mut masks, &batch, &reference, cfg.coefficients)?;
        history.push(terms);
        if !terms.is_finite() {
            return Err(ExplainError::Diverged { epoch, history });
        }
        match adam.step(vec![&mut masks.node, &mut masks.edge]) {
            Ok(()) => {}
            Err(TrainError::NanGradient(_)) => {
                return Err(ExplainError::Diverged { epoch, history })
            }
            Err(e) => unreachable!("mask step cannot fail otherwise: {e}"),
        }
    }
    Ok(Explanation { masks, history })
}

/// Accuracy of masked predictions against the true labels of `ds`.
pub fn masked_accuracy(
    model: &GnnClassifier,
    masks: &MaskSet,
    ds: &EpochDataset,
) -> Result<f64, ExplainError> {
    if ds.is_empty() {
        return Err(ExplainError::Empty);
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let (batch, labels) = ds.batch(&all);
    let pred = predictions(&masked_forward(model, masks, &batch)?);
    Ok(pred.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// Population z-score; all-zero (and `false`) when the values are constant.
pub fn standardize(values: &[f64]) -> (Vec<f64>, bool) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mu.abs().max(1e-300)) || values.iter().all(|&v| v == values[0]) {
        return (vec![0.0; values.len()], false);
    }
    (values.iter().map(|v| (v - mu) / sd).collect(), true)
}

/// Standardized per-channel importance.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMap {
    pub layout: ChannelLayout,
    pub scores: Vec<f64>,
    /// Standardized edge mask values aligned with `edges`, when available.
    pub edge_scores: Option<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
}

/// Z-scores the node masks across channels. Constant masks give an all-zero map
/// and a logged warning.
pub fn contribution_map(masks: &MaskSet, layout: &ChannelLayout) -> ContributionMap {
    let (scores, ok) = standardize(&masks.node_masks());
    if !ok {
        log::warn!("node masks are constant; contribution map is all zero");
    }
    let edge_scores = (!masks.edges.is_empty()).then(|| standardize(&masks.edge_masks()).0);
    ContributionMap {
        layout: layout.clone(),
        scores,
        edge_scores,
        edges: masks.edges.clone(),
    }
}

impl ContributionMap {
    /// Channel indices sorted by descending score (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        self.ranking().into_iter().take(k).collect()
    }

    /// `channel,x,y,z,score` rows preceded by a `# head_radius=` comment.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# head_radius={}", self.layout.head_radius())?;
        writeln!(w, "channel,x,y,z,score")?;
        for (ch, s) in self.layout.channels().iter().zip(&self.scores) {
            writeln!(
                w,
                "{},{},{},{},{}",
                ch.name, ch.pos[0], ch.pos[1], ch.pos[2], s
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, ExplainError> {
        let mut head_radius = None;
        let mut channels = Vec::new();
        let mut scores = Vec::new();
        let mut saw_header = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |msg: String| ExplainError::Parse { line: i + 1, msg };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("head_radius=") {
                    head_radius = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
                }
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if !saw_header {
                if fields != ["channel", "x", "y", "z", "score"] {
                    return Err(bad("expected header channel,x,y,z,score".into()));
                }
                saw_header = true;
                continue;
            }
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", fields.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("`{s}` is not a number")))
            };
            channels.push(Channel {
                name: fields[0].to_string(),
                pos: [num(fields[1])?, num(fields[2])?, num(fields[3])?],
            });
            scores.push(num(fields[4])?);
        }
        let layout = ChannelLayout::new(channels, head_radius)?;
        Ok(Self {
            layout,
            scores,
            edge_scores: None,
            edges: Vec::new(),
        })
    }
}
