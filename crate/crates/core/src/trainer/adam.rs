use super::{TrainConfig, TrainError};
use crate::nn::Param;

/// Adam with bias correction and coupled L2: `g ← g + wd·θ` before the moment update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            ..Self::new(cfg.learning_rate, cfg.weight_decay)
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of every parameter. Parameters must be passed in the same order each call.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, mut params: Vec<&mut Param>) -> Result<(), TrainError> {
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(TrainError::NanGradient(p.name.clone()));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
                .collect();
        }
        assert_eq!(
            self.moments.len(),
            params.len(),
            "parameter list changed between steps"
        );
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad.data().to_vec();
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] + self.weight_decay * *theta;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                *theta -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(v: f64, g: f64) -> Param {
        let mut p = Param::new("w", Tensor::scalar(v));
        p.grad = Tensor::scalar(g);
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = param(0.7, 0.0);
        let mut adam = Adam::new(1e-2, 0.0);
        for _ in 0..10 {
            adam.step(vec![&mut p]).unwrap();
        }
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        // m̂ = g and v̂ = g² exactly under bias correction, so every step is lr·g/(|g|+eps).
        let mut p = param(0.0, -3.0);
        let mut adam = Adam::new(1e-3, 0.0);
        let mut prev = 0.0;
        for _ in 0..200 {
            adam.step(vec![&mut p]).unwrap();
            let now = p.value.data()[0];
            let expected = 1e-3 * 3.0 / (3.0 + 1e-8);
            assert!(((now - prev) - expected).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn pure_decay_is_monotone_toward_zero() {
        let mut p = param(2.0, 0.0);
        let mut adam = Adam::new(1e-2, 0.5);
        let mut prev = 2.0;
        for _ in 0..100 {
            adam.step(vec![&mut p]).unwrap();
            let now = p.value.data()[0];
            assert!(now < prev && now > 0.0);
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_names_the_tensor() {
        let mut a = param(1.0, 0.1);
        let mut b = Param::new("cheb.theta", Tensor::scalar(1.0));
        b.grad = Tensor::scalar(f64::NAN);
        let mut adam = Adam::new(1e-2, 0.0);
        match adam.step(vec![&mut a, &mut b]) {
            Err(TrainError::NanGradient(name)) => assert_eq!(name, "cheb.theta"),
            other => panic!("{other:?}"),
        }
        assert_eq!(a.value.data()[0], 1.0);
    }
}
