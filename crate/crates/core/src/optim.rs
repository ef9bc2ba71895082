//! Gradient-descent optimizers applied to a model's named parameters.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::Sgd => write!(f, "sgd"),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// SGD momentum; plain gradient descent by default.
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// `p -= lr·g` (momentum 0).
pub fn sgd_update<S: Scalar>(params: &mut [S], grads: &[S], cfg: &OptimizerConfig) {
    let lr = S::from_f64(cfg.learning_rate);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Adam with bias correction; `step` counts from 1.
pub fn adam_update<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    m: &mut [S],
    v: &mut [S],
    step: u64,
    cfg: &OptimizerConfig,
) {
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let lr = S::from_f64(cfg.learning_rate);
    let eps = S::from_f64(cfg.epsilon);
    let bias1 = S::from_f64(1.0 - cfg.beta1.powi(step as i32));
    let bias2 = S::from_f64(1.0 - cfg.beta2.powi(step as i32));
    for ((p, &g), (mi, vi)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
        *mi = b1 * *mi + (S::ONE - b1) * g;
        *vi = b2 * *vi + (S::ONE - b2) * g * g;
        let m_hat = *mi / bias1;
        let v_hat = *vi / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// Optimizer state keyed by parameter name, so it survives the parameter
/// tensors being replaced on every step.
pub struct Optimizer<S: Scalar> {
    pub cfg: OptimizerConfig,
    moments: HashMap<String, Moments<S>>,
    steps: u64,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Optimizer {
            cfg,
            moments: HashMap::new(),
            steps: 0,
        }
    }

    /// Apply one update from the given gradients. Parameters without a
    /// gradient entry are left untouched.
    pub fn step(&mut self, model: &mut Model<S>, grads: &Gradients<S>) -> Result<()> {
        self.steps += 1;
        let cfg = self.cfg;
        let steps = self.steps;
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |name, param| {
            let Some(grad) = grads.get(param) else {
                return Ok(());
            };
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    site: format!("gradient of {name} ({bad})"),
                });
            }
            let mut data = param.data().to_vec();
            match cfg.kind {
                OptimizerKind::Sgd => sgd_update(&mut data, grad, &cfg),
                OptimizerKind::Adam => {
                    let slot = moments.entry(name.to_string()).or_insert_with(|| Moments {
                        m: vec![S::ZERO; grad.len()],
                        v: vec![S::ZERO; grad.len()],
                    });
                    if slot.m.len() != grad.len() {
                        return Err(Error::Contract(format!(
                            "optimizer state for {name} has stale size"
                        )));
                    }
                    adam_update(&mut data, grad, &mut slot.m, &mut slot.v, steps, &cfg);
                }
            }
            *param = Tensor::param(data, param.shape().clone())?;
            Ok(())
        })
    }
}
