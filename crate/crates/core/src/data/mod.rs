//! Trial epochs, dataset balancing, the synthetic generator and epoch file I/O.

mod balance;
mod io;
pub mod synthetic;

pub use balance::{balance_dataset, BalanceOptions};
pub use io::{export_csv, import_csv, load_epochs, read_epochs, save_epochs, write_epochs};
pub use synthetic::{generate_synthetic, BandSignature, LabelSignature, NoiseSpec, SyntheticSpec};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{ChannelLayout, GraphError};
use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("epoch {index} has shape {actual:?}, dataset expects [{channels}, {times}]")]
    Shape {
        index: usize,
        channels: usize,
        times: usize,
        actual: Vec<usize>,
    },
    #[error("dataset layout has {layout} channels but epochs have {epochs}")]
    LayoutMismatch { layout: usize, epochs: usize },
    #[error("sampling rate must be positive and finite, got {0}")]
    BadSamplingRate(f64),
    #[error("empty class after filtering in {scope}: {successes} successes, {failures} failures")]
    EmptyClass {
        scope: String,
        successes: usize,
        failures: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("not an epoch file (bad magic)")]
    BadMagic,
    #[error("unsupported epoch file version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated record at epoch {0}")]
    Truncated(usize),
    #[error("{0} unexpected trailing bytes after the last epoch")]
    TrailingBytes(usize),
    #[error("inconsistent shape: {0}")]
    Inconsistent(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Experimental condition: which round (first/second) and pocket (left/right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    FirstLeft,
    FirstRight,
    SecondLeft,
    SecondRight,
}

/// Which pair of groups a pretraining source is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PretrainScheme {
    /// Source: the two groups of the other round.
    Round,
    /// Source: the two groups of the other pocket.
    Pocket,
}

impl PretrainScheme {
    pub const ALL: [PretrainScheme; 2] = [PretrainScheme::Round, PretrainScheme::Pocket];

    pub fn name(self) -> &'static str {
        match self {
            PretrainScheme::Round => "round",
            PretrainScheme::Pocket => "pocket",
        }
    }
}

impl FromStr for PretrainScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "round" => Ok(PretrainScheme::Round),
            "pocket" => Ok(PretrainScheme::Pocket),
            _ => Err(format!("unknown pretraining scheme `{s}` (round|pocket)")),
        }
    }
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::FirstLeft,
        Group::FirstRight,
        Group::SecondLeft,
        Group::SecondRight,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_first_round(self) -> bool {
        matches!(self, Group::FirstLeft | Group::FirstRight)
    }

    pub fn is_left_pocket(self) -> bool {
        matches!(self, Group::FirstLeft | Group::SecondLeft)
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::FirstLeft => "FirstLeft",
            Group::FirstRight => "FirstRight",
            Group::SecondLeft => "SecondLeft",
            Group::SecondRight => "SecondRight",
        }
    }

    /// The two groups a model for `self` is pretrained on under `scheme`.
    pub fn pretrain_sources(self, scheme: PretrainScheme) -> [Group; 2] {
        let mut out = Group::ALL.into_iter().filter(|g| match scheme {
            PretrainScheme::Round => g.is_first_round() != self.is_first_round(),
            PretrainScheme::Pocket => g.is_left_pocket() != self.is_left_pocket(),
        });
        [
            out.next().expect("two sources"),
            out.next().expect("two sources"),
        ]
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Group::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown group `{s}`"))
    }
}

/// Outcome of the previous trial. The class index used by the model is `Failure = 0`, `Success = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Failure,
    Success,
}

impl Label {
    pub fn class(self) -> usize {
        self as usize
    }

    pub fn from_class(c: usize) -> Option<Self> {
        match c {
            0 => Some(Label::Failure),
            1 => Some(Label::Success),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Failure => "failure",
            Label::Success => "success",
        }
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "success" | "1" => Ok(Label::Success),
            "failure" | "0" => Ok(Label::Failure),
            _ => Err(format!("unknown label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialEpoch {
    /// `[C, T]`
    pub signal: Tensor,
    pub label: Label,
    pub participant: u16,
    pub group: Group,
    /// Signed angular error of the previous shot in degrees; 0 is a perfect shot.
    pub angular_error_deg: f64,
    pub block_index: u16,
    pub trial_index: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochDataset {
    epochs: Vec<TrialEpoch>,
    fs: f64,
    layout: ChannelLayout,
}

impl EpochDataset {
    /// Validates that every epoch is `[C, T]` with `C` equal to the layout size and a shared `T`.
    pub fn new(epochs: Vec<TrialEpoch>, fs: f64, layout: ChannelLayout) -> Result<Self, DataError> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(DataError::BadSamplingRate(fs));
        }
        if let Some(first) = epochs.first() {
            let shape = first.signal.shape();
            if shape.len() != 2 {
                return Err(DataError::Inconsistent(format!(
                    "epoch signal must be [C, T], got {shape:?}"
                )));
            }
            if shape[0] != layout.len() {
                return Err(DataError::LayoutMismatch {
                    layout: layout.len(),
                    epochs: shape[0],
                });
            }
            let (c, t) = (shape[0], shape[1]);
            for (index, e) in epochs.iter().enumerate() {
                if e.signal.shape() != [c, t] {
                    return Err(DataError::Shape {
                        index,
                        channels: c,
                        times: t,
                        actual: e.signal.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { epochs, fs, layout })
    }

    pub fn epochs(&self) -> &[TrialEpoch] {
        &self.epochs
    }

    pub fn into_epochs(self) -> Vec<TrialEpoch> {
        self.epochs
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.layout.len()
    }

    /// Samples per epoch; 0 for an empty dataset.
    pub fn n_times(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.signal.shape()[1])
    }

    /// Same metadata, subset of epochs (order preserved).
    pub fn filtered(&self, keep: impl Fn(&TrialEpoch) -> bool) -> Self {
        Self {
            epochs: self.epochs.iter().filter(|e| keep(e)).cloned().collect(),
            fs: self.fs,
            layout: self.layout.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            epochs: indices.iter().map(|&i| self.epochs[i].clone()).collect(),
            fs: self.fs,
            layout: self.layout.clone(),
        }
    }

    pub fn group(&self, group: Group) -> Self {
        self.filtered(|e| e.group == group)
    }

    pub fn groups(&self, groups: &[Group]) -> Self {
        self.filtered(|e| groups.contains(&e.group))
    }

    /// `[failures, successes]`
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.epochs {
            counts[e.label.class()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.label.class()).collect()
    }

    /// Sorted distinct participant ids.
    pub fn participants(&self) -> Vec<u16> {
        let mut p: Vec<u16> = self.epochs.iter().map(|e| e.participant).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Stacks the selected epochs into an `[N, C, T]` batch plus class labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (c, t) = (self.n_channels(), self.n_times());
        let mut data = Vec::with_capacity(indices.len() * c * t);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.epochs[i].signal.data());
            labels.push(self.epochs[i].label.class());
        }
        (
            Tensor::new(vec![indices.len(), c, t], data).expect("validated shapes"),
            labels,
        )
    }

    /// Replaces every label (e.g. for a permutation null control).
    pub fn with_labels(&self, labels: &[Label]) -> Self {
        assert_eq!(labels.len(), self.len(), "one label per epoch");
        let mut out = self.clone();
        for (e, &l) in out.epochs.iter_mut().zip(labels) {
            e.label = l;
        }
        out
    }

    /// Concatenates datasets with identical layouts, rates and epoch shapes.
    pub fn concat(parts: &[&EpochDataset]) -> Result<Self, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::Inconsistent("nothing to concatenate".into()))?;
        let mut epochs = Vec::new();
        for p in parts {
            if p.fs != first.fs || p.layout.names() != first.layout.names() {
                return Err(DataError::Inconsistent(
                    "datasets differ in rate or channels".into(),
                ));
            }
            epochs.extend(p.epochs.iter().cloned());
        }
        Self::new(epochs, first.fs, first.layout.clone())
    }
}
