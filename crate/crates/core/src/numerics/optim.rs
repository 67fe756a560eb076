//! AdamW with a linear learning-rate warmup and an optional linear decay.
//!
//! ```text
//! lr(s) = base_lr * min(1, s / warmup_steps)
//!         * clamp((decay_steps - s) / (decay_steps - warmup_steps), 0, 1)
//! theta <- theta - lr * weight_decay * theta      (matrices only)
//! m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
//! theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```
//! where `s` is the number of updates already applied and `t = s + 1`.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub warmup_steps: u64,
    /// Step at which the rate reaches zero after warmup; constant when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_steps: Option<u64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { base_lr: 1e-4, warmup_steps: 10_000, decay_steps: None, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamWConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = if self.warmup_steps == 0 { 1.0 } else { (step as f64 / self.warmup_steps as f64).min(1.0) };
        let decay = match self.decay_steps {
            Some(end) if end > self.warmup_steps => {
                ((end as f64 - step as f64) / (end - self.warmup_steps) as f64).clamp(0.0, 1.0)
            }
            Some(_) => 0.0,
            None => 1.0,
        };
        self.base_lr * warm * decay
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &ParamStore<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        Self { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    /// Applies one update from the gradients stored in `params` and returns the lr used.
    pub fn step(&mut self, params: &mut ParamStore<f32>) -> f64 {
        let c = &self.config;
        let lr = c.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let (values, grads) = params.split_mut();
        for (i, value) in values.iter_mut().enumerate() {
            let decay = value.rank() >= 2;
            let g = grads.get(super::params::ParamId(i));
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mut x = *w as f64;
                if decay {
                    x -= lr * c.weight_decay * x;
                }
                let mhat = m[j] as f64 / bc1;
                let vhat = v[j] as f64 / bc2;
                x -= lr * mhat / (vhat.sqrt() + c.epsilon);
                *w = x as f32;
            }
        }
        self.step += 1;
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn warmup_schedule() {
        let c = AdamWConfig { base_lr: 1e-4, warmup_steps: 10_000, ..Default::default() };
        assert_eq!(c.lr_at(0), 0.0);
        assert!((c.lr_at(5_000) - 5e-5).abs() < 1e-18);
        assert!((c.lr_at(10_000) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(50_000) - 1e-4).abs() < 1e-18);
        let d = AdamWConfig { decay_steps: Some(30_000), ..c };
        assert!((d.lr_at(10_000) - 1e-4).abs() < 1e-18);
        assert!((d.lr_at(20_000) - 5e-5).abs() < 1e-18);
        assert_eq!(d.lr_at(30_000), 0.0);
        assert_eq!(d.lr_at(40_000), 0.0);
    }

    #[test]
    fn first_update_moves_against_gradient() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let mut buf = store.new_grad_buffer();
        buf.add(id, &[0.5, -2.0]);
        store.accumulate(&buf);
        let cfg = AdamWConfig { base_lr: 0.1, warmup_steps: 0, weight_decay: 0.0, ..Default::default() };
        let mut opt = OptimizerState::new(cfg, &store);
        opt.step(&mut store);
        // bias-corrected first step is lr * sign(g) (up to eps)
        let w = store.value(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn decay_applies_to_matrices_only() {
        let mut store = ParamStore::<f32>::new();
        let m = store.add("m", Tensor::full(&[1, 1], 1.0));
        let b = store.add("b", Tensor::full(&[1], 1.0));
        let cfg = AdamWConfig { base_lr: 0.5, warmup_steps: 0, weight_decay: 0.1, ..Default::default() };
        let mut opt = OptimizerState::new(cfg, &store);
        opt.step(&mut store);
        assert!((store.value(m).data()[0] - 0.95).abs() < 1e-7);
        assert_eq!(store.value(b).data()[0], 1.0);
    }
}
