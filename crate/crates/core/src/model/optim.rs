use serde::{Deserialize, Serialize};

use super::params::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
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

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn build(self, lr: f64) -> Optimizer {
        Optimizer {
            kind: self,
            lr,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }
}

/// Produces the update proposal Δθ for a gradient. Callers decide which
/// coordinates of the proposal are written.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn propose(&mut self, grad: &ParameterVector) -> ParameterVector {
        let mut delta = ParameterVector::zeros_like(grad);
        match self.kind {
            OptimizerKind::Sgd => {
                for (d, g) in delta.values_mut().iter_mut().zip(grad.values()) {
                    *d = -self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != grad.len() {
                    self.m = vec![0.0; grad.len()];
                    self.v = vec![0.0; grad.len()];
                }
                self.step += 1;
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (d, &g)) in delta.values_mut().iter_mut().zip(grad.values()).enumerate() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    *d = -self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        delta
    }
}
