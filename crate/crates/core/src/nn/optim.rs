use super::{ModelConfig, Weights};

/// RMSProp hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self { learning_rate: 0.001, rho: 0.9, epsilon: 1e-7 }
    }
}

/// Running average of squared gradients, one accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub params: RmsProp,
    pub acc: Weights,
}

impl OptimizerState {
    pub fn new(cfg: &ModelConfig, params: RmsProp) -> Self {
        Self { params, acc: Weights::zeros(cfg) }
    }

    /// `acc ← ρ acc + (1−ρ) g²;  θ ← θ − lr g / (√acc + ε)`
    pub fn update(&mut self, w: &mut Weights, grads: &Weights) {
        let RmsProp { learning_rate: lr, rho, epsilon } = self.params;
        for ((theta, acc), &g) in w.iter_mut().zip(self.acc.iter_mut()).zip(grads.iter()) {
            *acc = rho * *acc + (1.0 - rho) * g * g;
            *theta -= lr * g / (acc.sqrt() + epsilon);
        }
    }
}
