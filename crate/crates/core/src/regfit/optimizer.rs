//! First-order parameter updates: stochastic gradient with momentum and an
//! adaptive per-coordinate variant.
//!
//! Momentum update:  v ← μ v + g,  p ← p − α v.
//! Adaptive update:  m ← β₁ m + (1-β₁) g,  v ← β₂ v + (1-β₂) g²,
//!                   p ← p − α m̂ / (√v̂ + ε) with bias-corrected m̂, v̂.
//! Both are deterministic functions of the gradient sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum OptVariant {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptVariant {
    pub fn adam() -> Self {
        OptVariant::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerSpec {
    pub variant: OptVariant,
    pub lr: f64,
    pub steps: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            variant: OptVariant::adam(),
            lr: 0.1,
            steps: 100,
        }
    }
}

/// Per-parameter state carried across steps.
#[derive(Debug, Clone)]
pub struct OptState {
    velocity: Vec<f64>,
    second: Vec<f64>,
    step: usize,
}

impl OptState {
    pub fn new(n: usize) -> Self {
        OptState {
            velocity: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// Apply one update in place. Rejects non-finite gradients with the step
/// index at which they appeared.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptState,
    spec: &OptimizerSpec,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::structure(format!(
            "optimizer shapes differ: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step: state.step });
    }
    state.step += 1;
    match spec.variant {
        OptVariant::Sgd { momentum } => {
            for i in 0..params.len() {
                state.velocity[i] = momentum * state.velocity[i] + grads[i];
                params[i] -= spec.lr * state.velocity[i];
            }
        }
        OptVariant::Adam { beta1, beta2, eps } => {
            let t = state.step as f64;
            let c1 = 1.0 - beta1.powf(t);
            let c2 = 1.0 - beta2.powf(t);
            for i in 0..params.len() {
                state.velocity[i] = beta1 * state.velocity[i] + (1.0 - beta1) * grads[i];
                state.second[i] = beta2 * state.second[i] + (1.0 - beta2) * grads[i] * grads[i];
                let mhat = state.velocity[i] / c1;
                let vhat = state.second[i] / c2;
                params[i] -= spec.lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
    Ok(())
}
