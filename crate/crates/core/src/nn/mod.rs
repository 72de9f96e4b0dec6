//! Dense `f64` tensors and the hand-differentiated layers of the classifier.

mod gradcheck;
mod layers;
mod loss;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{
    avg_pool, avg_pool_backward, dropout_mask, global_avg_pool, global_avg_pool_backward, softplus,
    softplus_backward, AvgPool, BatchNorm, BnCache, ChebConv, ChebConvOn, GlobalAvgPool, Linear,
    PRelu, Softplus, TemporalConv, TrainModeBatchNorm,
};
pub use loss::weighted_cross_entropy;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape {shape:?} needs {expected} elements, buffer has {actual}")]
    BufferSize {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("time axis has {len} samples, shorter than the {kernel}-tap kernel")]
    TooShort { len: usize, kernel: usize },
    #[error("train-mode batch norm needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("class weights must be nonnegative and finite, got {0:?}")]
    BadClassWeights([f64; 2]),
    #[error("label {0} out of range for a 2-class head")]
    BadLabel(usize),
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let expected = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::BufferSize {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new(-bound, bound).expect("bound is positive");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NnError::BufferSize {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, rank: usize, op: &'static str) -> Result<(), NnError> {
        if self.shape.len() != rank {
            return Err(NnError::Shape {
                op,
                expected: vec![0; rank],
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_shape(&self, shape: &[usize], op: &'static str) -> Result<(), NnError> {
        if self.shape != shape {
            return Err(NnError::Shape {
                op,
                expected: shape.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// A learnable tensor and its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Dot product with four independent accumulators so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// A deterministic differentiable map with learnable parameters.
///
/// `backward` accumulates into the parameter gradient buffers and returns the
/// gradient with respect to `x`.
pub trait Layer {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError>;
    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}
