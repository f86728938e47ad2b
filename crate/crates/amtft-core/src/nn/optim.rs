//! Gradient-ascent optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use super::{ParamLayout, ParameterVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Buffer positions (running statistics) excluded from updates.
    frozen: Vec<bool>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, layout: &ParamLayout) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let mut frozen = vec![false; layout.total];
        for entry in &layout.entries {
            if entry.kind.is_buffer() {
                frozen[entry.offset..entry.offset + entry.len].fill(true);
            }
        }
        let n = layout.total;
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            frozen,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Ascent step: theta += lr * direction(grad).
    pub fn step(&mut self, params: &mut ParameterVector, grad: &ParameterVector) {
        assert_eq!(params.len(), grad.len(), "parameter/gradient shape mismatch");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for i in 0..params.len() {
                    if !self.frozen[i] {
                        params.data[i] += self.learning_rate * grad.data[i];
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let t = self.step as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                for i in 0..params.len() {
                    if self.frozen[i] {
                        continue;
                    }
                    let g = grad.data[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params.data[i] += self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}
