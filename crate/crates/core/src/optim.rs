//! Parameter update rules: plain SGD and the adaptive-moment rule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::net::{Gradients, ParamVector};

/// Update rule selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Sgd,
    /// First/second-moment estimation with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Rule {
    pub fn adam_default() -> Self {
        Rule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Mutable optimizer state owned by exactly one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub rule: Rule,
    pub step: u64,
    pub lr: f64,
    /// First-moment accumulator (adaptive-moment only, else empty).
    pub m: Vec<f64>,
    /// Second-moment accumulator (adaptive-moment only, else empty).
    pub v: Vec<f64>,
    /// Running `beta1^step` / `beta2^step`, kept incrementally so bias
    /// correction never needs a `powf`.
    pub beta1_pow: f64,
    pub beta2_pow: f64,
}

impl OptimizerState {
    pub fn new(rule: Rule, lr: f64, param_len: usize) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::invalid("optimizer", "learning rate must be > 0"));
        }
        let (m, v) = match rule {
            Rule::Sgd => (Vec::new(), Vec::new()),
            Rule::Adam { .. } => (vec![0.0; param_len], vec![0.0; param_len]),
        };
        Ok(OptimizerState {
            rule,
            step: 0,
            lr,
            m,
            v,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        OptimizerState::new(Rule::Sgd, lr, 0)
    }

    pub fn adam(lr: f64, param_len: usize) -> Result<Self> {
        OptimizerState::new(Rule::adam_default(), lr, param_len)
    }
}

/// Applies one update in place and advances the step counter.
pub fn optimizer_step(
    params: &mut ParamVector,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if params.layout() != grads.layout() {
        return Err(Error::ShapeMismatch {
            context: "optimizer_step: gradient layout",
            expected: vec![params.len()],
            found: vec![grads.values().len()],
        });
    }
    match state.rule {
        Rule::Sgd => {
            for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                *p -= state.lr * g;
            }
        }
        Rule::Adam { beta1, beta2, eps } => {
            if state.m.len() != params.len() {
                return Err(Error::ShapeMismatch {
                    context: "optimizer_step: moment accumulators",
                    expected: vec![params.len()],
                    found: vec![state.m.len()],
                });
            }
            state.beta1_pow *= beta1;
            state.beta2_pow *= beta2;
            let lr = state.lr;
            let bias1 = 1.0 - state.beta1_pow;
            let bias2 = 1.0 - state.beta2_pow;
            for (((p, g), m), v) in params
                .values_mut()
                .iter_mut()
                .zip(grads.values())
                .zip(state.m.iter_mut())
                .zip(state.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
    }
    state.step += 1;
    Ok(())
}
