use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Period of the cosine schedule in epochs.
    pub total_epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_epochs: 30,
        }
    }
}

/// `base * 0.5 * (1 + cos(pi * epoch / total))`.
pub fn cosine_lr(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return base;
    }
    let frac = epoch.min(total_epochs) as f64 / total_epochs as f64;
    base * 0.5 * (1.0 + (PI * frac).cos())
}

/// Adam without weight decay, learning rate annealed per epoch.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.rows(), p.cols());
        Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(self.config.lr, epoch, self.config.total_epochs)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], epoch: usize) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "adam expects {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::Shape {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.lr_at(epoch);
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
