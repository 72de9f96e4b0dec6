//! Channel-graph neural networks for EEG epoch classification.
//!
//! The crate covers the whole pipeline:
//!
//! - [`graph`]: electrode layouts, inverse-square-distance adjacency, Laplacian spectra
//! - [`nn`] and [`model`]: a shallow temporal-conv + Chebyshev GNN with hand-written backprop
//! - [`data`]: epoch datasets, class balancing, binary/CSV I/O, a synthetic generator
//! - [`trainer`]: Adam with L2, participant-stratified folds, pretraining, cross-validation
//! - [`explain`]: learnable node/edge masks and standardized contribution maps
//! - [`mapgeo`]: polar map embedding, sliced Gromov-Wasserstein distances, rank tests
//!
//! The `neurograph` binary wraps these as subcommands; see [`cli`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod explain;
pub mod graph;
pub mod mapgeo;
pub mod model;
pub mod nn;
pub mod topomap;
pub mod trainer;

pub use graph::{ChannelLayout, WeightedGraph};
pub use model::{ArchConfig, GnnClassifier, Mode};
pub use nn::Tensor;
