//! First-order optimizers over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "default_adam_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn default_adam_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: default_adam_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(format!("bad adam settings lr={lr} beta1={beta1} beta2={beta2} eps={eps}"));
                }
            }
            OptimizerConfig::Sgd { lr, momentum } => {
                if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
                    return Err(format!("bad sgd settings lr={lr} momentum={momentum}"));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, len: usize) -> Optimizer {
        Optimizer {
            config: *self,
            first: vec![0.0; len],
            second: match self {
                OptimizerConfig::Adam { .. } => vec![0.0; len],
                OptimizerConfig::Sgd { .. } => Vec::new(),
            },
            step: 0,
        }
    }
}

/// Optimizer state: Adam moments, or the SGD velocity in `first`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u32,
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.config {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            OptimizerConfig::Sgd { lr, momentum } => {
                for ((p, &g), vel) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    *vel = momentum * *vel + g;
                    *p -= lr * *vel;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias-corrected first step is lr * sign(g)
        let mut opt = OptimizerConfig::default().build(2);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[0.5, -3.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut opt = OptimizerConfig::Sgd { lr: 0.1, momentum: 0.5 }.build(1);
        let mut p = [4.0];
        for _ in 0..200 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-6);
    }
}
