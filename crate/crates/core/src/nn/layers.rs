use nalgebra::DMatrix;
use rand::Rng;

use super::{axpy, dot, glorot_bound, Layer, NnError, Param, Tensor};

/// Shared 1D convolution along time: every channel row is filtered by the same
/// `F` kernels (stride 1, no padding).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConv {
    pub weight: Param,
    pub bias: Param,
}

impl TemporalConv {
    pub fn new<R: Rng + ?Sized>(filters: usize, kernel: usize, rng: &mut R) -> Self {
        let bound = glorot_bound(kernel, filters * kernel);
        Self {
            weight: Param::new(
                "conv.weight",
                Tensor::uniform(&[filters, kernel], bound, rng),
            ),
            bias: Param::new("conv.bias", Tensor::zeros(&[filters])),
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// `[rows, T] -> [rows, F, T - k + 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        x.expect_rank(2, "temporal_conv")?;
        let (rows, len) = (x.shape()[0], x.shape()[1]);
        let (nf, k) = (self.filters(), self.kernel());
        if len < k {
            return Err(NnError::TooShort { len, kernel: k });
        }
        let out_len = len - k + 1;
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let xs = x.data();
        let mut out = vec![0.0; rows * nf * out_len];
        for r in 0..rows {
            let xr = &xs[r * len..(r + 1) * len];
            for f in 0..nf {
                let wf = &w[f * k..(f + 1) * k];
                let o = &mut out[(r * nf + f) * out_len..(r * nf + f + 1) * out_len];
                o.fill(b[f]);
                for (j, &wj) in wf.iter().enumerate() {
                    axpy(wj, &xr[j..j + out_len], o);
                }
            }
        }
        Tensor::new(vec![rows, nf, out_len], out)
    }

    /// Accumulates kernel and bias gradients; returns the input gradient when asked.
    pub fn backward_opt(
        &mut self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input: bool,
    ) -> Result<Option<Tensor>, NnError> {
        let (rows, len) = (x.shape()[0], x.shape()[1]);
        let (nf, k) = (self.filters(), self.kernel());
        let out_len = len - k + 1;
        grad_out.expect_shape(&[rows, nf, out_len], "temporal_conv backward")?;
        let xs = x.data();
        let g = grad_out.data();
        let w = self.weight.value.data().to_vec();
        let dw = self.weight.grad.data_mut();
        for r in 0..rows {
            let xr = &xs[r * len..(r + 1) * len];
            for f in 0..nf {
                let gf = &g[(r * nf + f) * out_len..(r * nf + f + 1) * out_len];
                let dwf = &mut dw[f * k..(f + 1) * k];
                for (j, slot) in dwf.iter_mut().enumerate() {
                    *slot += dot(gf, &xr[j..j + out_len]);
                }
            }
        }
        let db = self.bias.grad.data_mut();
        for r in 0..rows {
            for (f, slot) in db.iter_mut().enumerate() {
                *slot += g[(r * nf + f) * out_len..(r * nf + f + 1) * out_len]
                    .iter()
                    .sum::<f64>();
            }
        }
        if !want_input {
            return Ok(None);
        }
        let mut dx = vec![0.0; rows * len];
        for r in 0..rows {
            let dxr = &mut dx[r * len..(r + 1) * len];
            for f in 0..nf {
                let gf = &g[(r * nf + f) * out_len..(r * nf + f + 1) * out_len];
                let wf = &w[f * k..(f + 1) * k];
                for (j, &wj) in wf.iter().enumerate() {
                    axpy(wj, gf, &mut dxr[j..j + out_len]);
                }
            }
        }
        Tensor::new(vec![rows, len], dx).map(Some)
    }
}

impl Layer for TemporalConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        TemporalConv::forward(self, x)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        Ok(self
            .backward_opt(x, grad_out, true)?
            .expect("input gradient requested"))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Batch normalization over the feature axis of `[M, F, L]` inputs; statistics
/// pool the `M` and `L` axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

/// Batch statistics recorded by a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Tensor,
    pub count: usize,
}

impl BatchNorm {
    pub fn new(features: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Param::new("bn.gamma", Tensor::full(&[features], 1.0)),
            beta: Param::new("bn.beta", Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            eps,
            momentum,
        }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize), NnError> {
        x.expect_rank(3, "batch_norm")?;
        let (m, f, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if f != self.gamma.value.len() {
            return Err(NnError::Shape {
                op: "batch_norm",
                expected: vec![m, self.gamma.value.len(), l],
                actual: x.shape().to_vec(),
            });
        }
        Ok((m, f, l))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let (m, nf, l) = self.dims(x)?;
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        let (rm, rv) = (self.running_mean.data(), self.running_var.data());
        let mut out = x.clone();
        let data = out.data_mut();
        for i in 0..m {
            for f in 0..nf {
                let scale = g[f] / (rv[f] + self.eps).sqrt();
                for v in &mut data[(i * nf + f) * l..(i * nf + f + 1) * l] {
                    *v = (*v - rm[f]) * scale + b[f];
                }
            }
        }
        Ok(out)
    }

    /// Normalizes with batch statistics. Running statistics are left untouched;
    /// see [`BatchNorm::update_running`].
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BnCache), NnError> {
        let (m, nf, l) = self.dims(x)?;
        if m < 2 {
            return Err(NnError::BatchTooSmall(m));
        }
        let count = m * l;
        let xs = x.data();
        let mut mean = vec![0.0; nf];
        let mut var = vec![0.0; nf];
        for i in 0..m {
            for f in 0..nf {
                mean[f] += xs[(i * nf + f) * l..(i * nf + f + 1) * l]
                    .iter()
                    .sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= count as f64);
        for i in 0..m {
            for f in 0..nf {
                var[f] += xs[(i * nf + f) * l..(i * nf + f + 1) * l]
                    .iter()
                    .map(|v| (v - mean[f]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut out = x.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        {
            let xh = xhat.data_mut();
            let o = out.data_mut();
            for i in 0..m {
                for f in 0..nf {
                    for idx in (i * nf + f) * l..(i * nf + f + 1) * l {
                        xh[idx] = (xs[idx] - mean[f]) * inv_std[f];
                        o[idx] = xh[idx] * g[f] + b[f];
                    }
                }
            }
        }
        Ok((
            out,
            BnCache {
                mean,
                var,
                inv_std,
                xhat,
                count,
            },
        ))
    }

    /// Exponential moving average of the batch statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache) {
        let n = cache.count as f64;
        let unbias = if cache.count > 1 { n / (n - 1.0) } else { 1.0 };
        let mom = self.momentum;
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = (1.0 - mom) * *r + mom * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = (1.0 - mom) * *r + mom * v * unbias;
        }
    }

    pub fn backward_train(
        &mut self,
        cache: &BnCache,
        grad_out: &Tensor,
    ) -> Result<Tensor, NnError> {
        grad_out.expect_shape(cache.xhat.shape(), "batch_norm backward")?;
        let (m, nf, l) = self.dims(grad_out)?;
        let g = grad_out.data();
        let xh = cache.xhat.data();
        let gamma = self.gamma.value.data().to_vec();
        let mut sum_g = vec![0.0; nf];
        let mut sum_gx = vec![0.0; nf];
        for i in 0..m {
            for f in 0..nf {
                for idx in (i * nf + f) * l..(i * nf + f + 1) * l {
                    sum_g[f] += g[idx];
                    sum_gx[f] += g[idx] * xh[idx];
                }
            }
        }
        for f in 0..nf {
            self.beta.grad.data_mut()[f] += sum_g[f];
            self.gamma.grad.data_mut()[f] += sum_gx[f];
        }
        let n = cache.count as f64;
        let mut dx = grad_out.clone();
        let d = dx.data_mut();
        for i in 0..m {
            for f in 0..nf {
                let k = gamma[f] * cache.inv_std[f] / n;
                for idx in (i * nf + f) * l..(i * nf + f + 1) * l {
                    d[idx] = k * (n * g[idx] - sum_g[f] - xh[idx] * sum_gx[f]);
                }
            }
        }
        Ok(dx)
    }

    pub fn backward_eval(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let (m, nf, l) = self.dims(x)?;
        grad_out.expect_shape(x.shape(), "batch_norm backward")?;
        let (xs, g) = (x.data(), grad_out.data());
        let gamma = self.gamma.value.data().to_vec();
        let rm = self.running_mean.data().to_vec();
        let inv: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mut dx = grad_out.clone();
        let d = dx.data_mut();
        for i in 0..m {
            for f in 0..nf {
                for idx in (i * nf + f) * l..(i * nf + f + 1) * l {
                    self.beta.grad.data_mut()[f] += g[idx];
                    self.gamma.grad.data_mut()[f] += g[idx] * (xs[idx] - rm[f]) * inv[f];
                    d[idx] = g[idx] * gamma[f] * inv[f];
                }
            }
        }
        Ok(dx)
    }
}

impl Layer for BatchNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.forward_eval(x)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        self.backward_eval(x, grad_out)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Batch norm evaluated with batch statistics, for gradient checking.
#[derive(Debug, Clone)]
pub struct TrainModeBatchNorm(pub BatchNorm);

impl Layer for TrainModeBatchNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.0.forward_train(x)?.0)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let (_, cache) = self.0.forward_train(x)?;
        self.0.backward_train(&cache, grad_out)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.params_mut()
    }
}

/// Parametric ReLU with a single learnable negative slope.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Param,
}

impl PRelu {
    pub fn new(init: f64) -> Self {
        Self {
            slope: Param::new("prelu.slope", Tensor::scalar(init)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let a = self.slope.value.data()[0];
        x.map(|v| if v >= 0.0 { v } else { a * v })
    }

    pub fn backward_acc(&mut self, x: &Tensor, grad_out: &Tensor) -> Tensor {
        let a = self.slope.value.data()[0];
        let mut da = 0.0;
        let mut dx = grad_out.clone();
        for ((d, &xv), &g) in dx.data_mut().iter_mut().zip(x.data()).zip(grad_out.data()) {
            if xv < 0.0 {
                da += g * xv;
                *d = a * g;
            }
        }
        self.slope.grad.data_mut()[0] += da;
        dx
    }
}

impl Layer for PRelu {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(PRelu::forward(self, x))
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        grad_out.expect_shape(x.shape(), "prelu backward")?;
        Ok(self.backward_acc(x, grad_out))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.slope]
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus: the logistic sigmoid.
pub fn softplus_backward(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Softplus;

impl Layer for Softplus {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(x.map(softplus))
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        grad_out.expect_shape(x.shape(), "softplus backward")?;
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| g * softplus_backward(v));
        Tensor::new(x.shape().to_vec(), data.collect())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Non-overlapping mean pooling along the last axis. A trailing remainder
/// shorter than the window is dropped (`out = floor(L / window)`).
pub fn avg_pool(x: &Tensor, window: usize) -> Tensor {
    let len = *x.shape().last().expect("rank >= 1");
    let rows = x.len() / len.max(1);
    let out_len = len / window;
    let mut out = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let row = &x.data()[r * len..(r + 1) * len];
        for p in 0..out_len {
            out.push(row[p * window..(p + 1) * window].iter().sum::<f64>() / window as f64);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_len;
    Tensor::new(shape, out).expect("pool shape")
}

pub fn avg_pool_backward(input_shape: &[usize], grad_out: &Tensor, window: usize) -> Tensor {
    let len = *input_shape.last().expect("rank >= 1");
    let out_len = len / window;
    let rows = grad_out.len() / out_len.max(1);
    let mut dx = vec![0.0; rows * len];
    let scale = 1.0 / window as f64;
    for r in 0..rows {
        for p in 0..out_len {
            let g = grad_out.data()[r * out_len + p] * scale;
            dx[r * len + p * window..r * len + (p + 1) * window]
                .iter_mut()
                .for_each(|v| *v = g);
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("pool shape")
}

#[derive(Debug, Clone, Copy)]
pub struct AvgPool {
    pub window: usize,
}

impl Layer for AvgPool {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(avg_pool(x, self.window))
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        Ok(avg_pool_backward(x.shape(), grad_out, self.window))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Mean over the node axis: `[N, C, F] -> [N, F]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, NnError> {
    x.expect_rank(3, "global_avg_pool")?;
    let (n, c, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; n * f];
    for s in 0..n {
        for node in 0..c {
            let row = &x.data()[(s * c + node) * f..(s * c + node + 1) * f];
            for (o, v) in out[s * f..(s + 1) * f].iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f64);
    Tensor::new(vec![n, f], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (n, c, f) = (input_shape[0], input_shape[1], input_shape[2]);
    let mut dx = vec![0.0; n * c * f];
    for s in 0..n {
        for node in 0..c {
            for k in 0..f {
                dx[(s * c + node) * f + k] = grad_out.data()[s * f + k] / c as f64;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("pool shape")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalAvgPool;

impl Layer for GlobalAvgPool {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        global_avg_pool(x)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        Ok(global_avg_pool_backward(x.shape(), grad_out))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Inverted-dropout multipliers: each entry is 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Chebyshev spectral graph convolution `Σ_k T_k(L̃) H Θ_k` over `[N, C, Fin]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebConv {
    /// `[K, Fin, Fout]`
    pub theta: Param,
}

/// Row-major dense copy of a square matrix.
fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
    out
}

/// `out = alpha * L z + beta * prev` for `L` (C×C) and `z`, `prev` (C×F), all row-major.
fn lap_step(
    l: &[f64],
    z: &[f64],
    prev: Option<&[f64]>,
    c: usize,
    f: usize,
    alpha: f64,
) -> Vec<f64> {
    let mut out = match prev {
        Some(p) => p.iter().map(|v| -v).collect(),
        None => vec![0.0; c * f],
    };
    for i in 0..c {
        for j in 0..c {
            let lij = alpha * l[i * c + j];
            if lij == 0.0 {
                continue;
            }
            axpy(lij, &z[j * f..(j + 1) * f], &mut out[i * f..(i + 1) * f]);
        }
    }
    out
}

impl ChebConv {
    pub fn new<R: Rng + ?Sized>(k: usize, fin: usize, fout: usize, rng: &mut R) -> Self {
        assert!(k >= 1, "Chebyshev order must be at least 1");
        let bound = glorot_bound(fin, fout);
        Self {
            theta: Param::new("cheb.theta", Tensor::uniform(&[k, fin, fout], bound, rng)),
        }
    }

    pub fn order(&self) -> usize {
        self.theta.value.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.theta.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.theta.value.shape()[2]
    }

    fn check(&self, h: &Tensor, rescaled: &DMatrix<f64>) -> Result<(usize, usize), NnError> {
        h.expect_rank(3, "cheb_conv")?;
        let (n, c, fin) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        if rescaled.nrows() != c || rescaled.ncols() != c || fin != self.in_features() {
            return Err(NnError::Shape {
                op: "cheb_conv",
                expected: vec![n, rescaled.nrows(), self.in_features()],
                actual: h.shape().to_vec(),
            });
        }
        Ok((n, c))
    }

    /// Chebyshev basis `Z_k = T_k(L̃) h` for one sample.
    fn basis(&self, l: &[f64], h: &[f64], c: usize) -> Vec<Vec<f64>> {
        let fin = self.in_features();
        let mut z = vec![h.to_vec()];
        if self.order() > 1 {
            z.push(lap_step(l, h, None, c, fin, 1.0));
        }
        for k in 2..self.order() {
            let next = lap_step(l, &z[k - 1], Some(&z[k - 2]), c, fin, 2.0);
            z.push(next);
        }
        z
    }

    pub fn forward(&self, h: &Tensor, rescaled: &DMatrix<f64>) -> Result<Tensor, NnError> {
        let (n, c) = self.check(h, rescaled)?;
        let (fin, fout) = (self.in_features(), self.out_features());
        let l = row_major(rescaled);
        let theta = self.theta.value.data();
        let mut out = vec![0.0; n * c * fout];
        for s in 0..n {
            let z = self.basis(&l, &h.data()[s * c * fin..(s + 1) * c * fin], c);
            let o = &mut out[s * c * fout..(s + 1) * c * fout];
            for (k, zk) in z.iter().enumerate() {
                let th = &theta[k * fin * fout..(k + 1) * fin * fout];
                for i in 0..c {
                    for a in 0..fin {
                        let v = zk[i * fin + a];
                        if v == 0.0 {
                            continue;
                        }
                        axpy(
                            v,
                            &th[a * fout..(a + 1) * fout],
                            &mut o[i * fout..(i + 1) * fout],
                        );
                    }
                }
            }
        }
        Tensor::new(vec![n, c, fout], out)
    }

    /// Accumulates `dΘ`; optionally returns `dH` and `dL̃` (summed over the batch).
    pub fn backward_full(
        &mut self,
        h: &Tensor,
        rescaled: &DMatrix<f64>,
        grad_out: &Tensor,
        want_input: bool,
        want_laplacian: bool,
    ) -> Result<(Option<Tensor>, Option<DMatrix<f64>>), NnError> {
        let (n, c) = self.check(h, rescaled)?;
        let (kk, fin, fout) = (self.order(), self.in_features(), self.out_features());
        grad_out.expect_shape(&[n, c, fout], "cheb_conv backward")?;
        let l = row_major(rescaled);
        let theta = self.theta.value.data().to_vec();
        let mut dh = if want_input {
            Some(vec![0.0; n * c * fin])
        } else {
            None
        };
        let mut dl = vec![0.0; c * c];
        for s in 0..n {
            let hs = &h.data()[s * c * fin..(s + 1) * c * fin];
            let gs = &grad_out.data()[s * c * fout..(s + 1) * c * fout];
            let z = self.basis(&l, hs, c);
            // dΘ_k += Z_kᵀ G ; B_k = G Θ_kᵀ
            let mut bk: Vec<Vec<f64>> = Vec::with_capacity(kk);
            {
                let dtheta = self.theta.grad.data_mut();
                for (k, zk) in z.iter().enumerate() {
                    let th = &theta[k * fin * fout..(k + 1) * fin * fout];
                    let dth = &mut dtheta[k * fin * fout..(k + 1) * fin * fout];
                    let mut b = vec![0.0; c * fin];
                    for i in 0..c {
                        let gi = &gs[i * fout..(i + 1) * fout];
                        for a in 0..fin {
                            let zv = zk[i * fin + a];
                            let row = &th[a * fout..(a + 1) * fout];
                            let drow = &mut dth[a * fout..(a + 1) * fout];
                            axpy(zv, gi, drow);
                            b[i * fin + a] = dot(gi, row);
                        }
                    }
                    bk.push(b);
                }
            }
            if !(want_input || want_laplacian) {
                continue;
            }
            // reverse through Z_k = 2 L̃ Z_{k-1} - Z_{k-2}, Z_1 = L̃ Z_0
            for k in (1..kk).rev() {
                let alpha = if k == 1 { 1.0 } else { 2.0 };
                let bcur = std::mem::take(&mut bk[k]);
                if want_laplacian {
                    let zp = &z[k - 1];
                    for i in 0..c {
                        for j in 0..c {
                            dl[i * c + j] += alpha
                                * dot(&bcur[i * fin..(i + 1) * fin], &zp[j * fin..(j + 1) * fin]);
                        }
                    }
                }
                // B_{k-1} += alpha * L̃ᵀ B_k
                for i in 0..c {
                    for j in 0..c {
                        let lji = alpha * l[j * c + i];
                        if lji == 0.0 {
                            continue;
                        }
                        axpy(
                            lji,
                            &bcur[j * fin..(j + 1) * fin],
                            &mut bk[k - 1][i * fin..(i + 1) * fin],
                        );
                    }
                }
                if k >= 2 {
                    for (dst, src) in bk[k - 2].iter_mut().zip(&bcur) {
                        *dst -= src;
                    }
                }
            }
            if let Some(dh) = dh.as_mut() {
                dh[s * c * fin..(s + 1) * c * fin].copy_from_slice(&bk[0]);
            }
        }
        let dh = dh.map(|v| Tensor::new(vec![n, c, fin], v)).transpose()?;
        let dl = want_laplacian.then(|| DMatrix::from_row_slice(c, c, &dl));
        Ok((dh, dl))
    }
}

/// A [`ChebConv`] bound to a fixed rescaled Laplacian, usable as a [`Layer`].
#[derive(Debug, Clone)]
pub struct ChebConvOn {
    pub conv: ChebConv,
    pub rescaled: DMatrix<f64>,
}

impl Layer for ChebConvOn {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.conv.forward(x, &self.rescaled)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let (dh, _) = self
            .conv
            .backward_full(x, &self.rescaled, grad_out, true, false)?;
        Ok(dh.expect("input gradient requested"))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.conv.theta]
    }
}

/// Fully connected layer `y = x Wᵀ + b` over `[N, in]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fin: usize, fout: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                "linear.weight",
                Tensor::uniform(&[fout, fin], glorot_bound(fin, fout), rng),
            ),
            bias: Param::new("linear.bias", Tensor::zeros(&[fout])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        x.expect_rank(2, "linear")?;
        let (n, fin) = (x.shape()[0], x.shape()[1]);
        let fout = self.weight.value.shape()[0];
        if fin != self.weight.value.shape()[1] {
            return Err(NnError::Shape {
                op: "linear",
                expected: vec![n, self.weight.value.shape()[1]],
                actual: x.shape().to_vec(),
            });
        }
        let (w, b) = (self.weight.value.data(), self.bias.value.data());
        let mut out = vec![0.0; n * fout];
        for s in 0..n {
            let xs = &x.data()[s * fin..(s + 1) * fin];
            for o in 0..fout {
                out[s * fout + o] = b[o]
                    + w[o * fin..(o + 1) * fin]
                        .iter()
                        .zip(xs)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        Tensor::new(vec![n, fout], out)
    }

    pub fn backward_acc(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        let (n, fin) = (x.shape()[0], x.shape()[1]);
        let fout = self.weight.value.shape()[0];
        grad_out.expect_shape(&[n, fout], "linear backward")?;
        let w = self.weight.value.data().to_vec();
        let mut dx = vec![0.0; n * fin];
        for s in 0..n {
            let xs = &x.data()[s * fin..(s + 1) * fin];
            for o in 0..fout {
                let g = grad_out.data()[s * fout + o];
                self.bias.grad.data_mut()[o] += g;
                let dw = &mut self.weight.grad.data_mut()[o * fin..(o + 1) * fin];
                for (d, xv) in dw.iter_mut().zip(xs) {
                    *d += g * xv;
                }
                for (d, wv) in dx[s * fin..(s + 1) * fin]
                    .iter_mut()
                    .zip(&w[o * fin..(o + 1) * fin])
                {
                    *d += g * wv;
                }
            }
        }
        Tensor::new(vec![n, fin], dx)
    }
}

impl Layer for Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Linear::forward(self, x)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
        self.backward_acc(x, grad_out)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut conv = TemporalConv::new(2, 3, &mut rng());
        conv.weight.value.fill(0.0);
        conv.bias.value = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let x = Tensor::uniform(&[4, 10], 1.0, &mut rng());
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[4, 2, 8]);
        for r in 0..4 {
            assert!(y.data()[(r * 2) * 8..(r * 2 + 1) * 8]
                .iter()
                .all(|&v| v == 0.5));
            assert!(y.data()[(r * 2 + 1) * 8..(r * 2 + 2) * 8]
                .iter()
                .all(|&v| v == -1.5));
        }
    }

    #[test]
    fn single_tap_identity_kernel() {
        let mut conv = TemporalConv::new(1, 1, &mut rng());
        conv.weight.value.fill(1.0);
        let x = Tensor::uniform(&[3, 16], 2.0, &mut rng());
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut r = rng();
        let conv = TemporalConv::new(4, 8, &mut r);
        let x = Tensor::uniform(&[3, 64], 1.0, &mut r);
        let y = conv.forward(&x).unwrap();
        let (w, b) = (conv.weight.value.data(), conv.bias.value.data());
        for c in 0..3 {
            for f in 0..4 {
                for t in 0..57 {
                    let mut acc = b[f];
                    for j in 0..8 {
                        acc += w[f * 8 + j] * x.data()[c * 64 + t + j];
                    }
                    assert!((y.data()[(c * 4 + f) * 57 + t] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_short_input() {
        let conv = TemporalConv::new(2, 8, &mut rng());
        let x = Tensor::zeros(&[2, 7]);
        assert_eq!(
            conv.forward(&x),
            Err(NnError::TooShort { len: 7, kernel: 8 })
        );
    }

    #[test]
    fn activations() {
        let p = PRelu::new(0.25);
        let y = p.forward(&Tensor::new(vec![3], vec![-2.0, 0.0, 3.0]).unwrap());
        assert_eq!(y.data(), &[-0.5, 0.0, 3.0]);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(800.0).is_finite());
        assert!(softplus(-30.0) > 0.0);
    }

    #[test]
    fn batchnorm_eval_identity() {
        let bn = BatchNorm::new(3, 0.0, 0.1);
        let x = Tensor::uniform(&[4, 3, 5], 1.0, &mut rng());
        assert_eq!(bn.forward_eval(&x).unwrap(), x);
    }

    #[test]
    fn batchnorm_train_constant_batch_gives_shift() {
        let mut bn = BatchNorm::new(2, 1e-5, 0.1);
        bn.beta.value = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let x = Tensor::full(&[4, 2, 6], 2.5);
        let (y, _) = bn.forward_train(&x).unwrap();
        for i in 0..4 {
            assert!(y.data()[(i * 2) * 6..(i * 2 + 1) * 6]
                .iter()
                .all(|&v| v == 0.3));
            assert!(y.data()[(i * 2 + 1) * 6..(i * 2 + 2) * 6]
                .iter()
                .all(|&v| v == -0.7));
        }
        assert_eq!(
            bn.forward_train(&Tensor::zeros(&[1, 2, 6])).unwrap_err(),
            NnError::BatchTooSmall(1)
        );
    }

    #[test]
    fn batchnorm_train_output_statistics() {
        let mut r = rng();
        let mut bn = BatchNorm::new(3, 1e-5, 0.1);
        bn.gamma.value = Tensor::new(vec![3], vec![2.0, 0.5, 1.5]).unwrap();
        bn.beta.value = Tensor::new(vec![3], vec![1.0, -1.0, 0.0]).unwrap();
        let x = Tensor::uniform(&[8, 3, 20], 3.0, &mut r).map(|v| v * 4.0 + 1.0);
        let (y, cache) = bn.forward_train(&x).unwrap();
        for f in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|i| y.data()[(i * 3 + f) * 20..(i * 3 + f + 1) * 20].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            let (g, b) = (bn.gamma.value.data()[f], bn.beta.value.data()[f]);
            assert!((mean - b).abs() < 1e-6);
            assert!(
                (var - g * g).abs() < 1e-6,
                "feature {f}: {var} vs {}",
                g * g
            );
        }
        let before = bn.running_mean.clone();
        bn.update_running(&cache);
        assert_ne!(before, bn.running_mean);
        assert!(bn.running_var.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn pooling() {
        let x = Tensor::new(vec![4], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).data(), &[2.0, 6.0]);
        let x = Tensor::new(vec![5], vec![1.0, 3.0, 5.0, 7.0, 100.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).data(), &[2.0, 6.0]);
        let same = Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(global_avg_pool(&same).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn global_pool_matches_column_means() {
        let x = Tensor::uniform(&[2, 12, 5], 1.0, &mut rng());
        let y = global_avg_pool(&x).unwrap();
        for s in 0..2 {
            for k in 0..5 {
                let direct: f64 =
                    (0..12).map(|c| x.data()[(s * 12 + c) * 5 + k]).sum::<f64>() / 12.0;
                assert!((y.data()[s * 5 + k] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cheb_order_one_is_shared_linear_map() {
        let mut r = rng();
        let conv = ChebConv::new(1, 3, 2, &mut r);
        let h = Tensor::uniform(&[1, 4, 3], 1.0, &mut r);
        let l = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.3 });
        let y = conv.forward(&h, &l).unwrap();
        let th = conv.theta.value.data();
        for i in 0..4 {
            for o in 0..2 {
                let direct: f64 = (0..3).map(|a| h.data()[i * 3 + a] * th[a * 2 + o]).sum();
                assert!((y.data()[i * 2 + o] - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cheb_zero_laplacian_order_three() {
        let mut r = rng();
        let conv = ChebConv::new(3, 2, 2, &mut r);
        let h = Tensor::uniform(&[1, 1, 2], 1.0, &mut r);
        let y = conv.forward(&h, &DMatrix::zeros(1, 1)).unwrap();
        let th = conv.theta.value.data();
        for o in 0..2 {
            let direct: f64 = (0..2)
                .map(|a| h.data()[a] * (th[a * 2 + o] - th[8 + a * 2 + o]))
                .sum();
            assert!((y.data()[o] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn cheb_rejects_mismatched_graph() {
        let conv = ChebConv::new(2, 3, 2, &mut rng());
        let h = Tensor::zeros(&[1, 4, 3]);
        assert!(conv.forward(&h, &DMatrix::zeros(5, 5)).is_err());
    }

    #[test]
    fn linear_forward() {
        let mut lin = Linear::new(2, 1, &mut rng());
        lin.weight.value = Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap();
        lin.bias.value = Tensor::scalar(0.5);
        let y = lin
            .forward(&Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn dropout_mask_scaling() {
        let m = dropout_mask(10_000, 0.35, &mut rng());
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / 1e4;
        assert!((kept - 0.65).abs() < 0.02);
        assert!(m
            .iter()
            .all(|&v| v == 0.0 || (v - 1.0 / 0.65).abs() < 1e-15));
    }
}
