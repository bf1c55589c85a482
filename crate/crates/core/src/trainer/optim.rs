//! Adam with decoupled weight decay and a linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Linear warmup to `base` over `warmup` steps, then linear decay to zero at
/// `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LrSchedule {
    /// Learning rate for the 1-based update `step`.
    pub fn at(&self, step: u64) -> f64 {
        if step <= self.warmup {
            return self.base * step as f64 / self.warmup.max(1) as f64;
        }
        if self.total <= self.warmup {
            return self.base;
        }
        let left = self.total.saturating_sub(step) as f64;
        self.base * left / (self.total - self.warmup) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Vec<f64>>, grads: &[&Vec<f64>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                p[i] -= lr * (update + weight_decay * p[i]);
            }
        }
    }
}
