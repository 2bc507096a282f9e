//! SGD with momentum and Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayeredModel;
use crate::tape::{GradientMap, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        epsilon: f64,
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

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        match *self {
            OptimizerConfig::Sgd { momentum, .. } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::config(format!("momentum {momentum} outside [0, 1)")))
            }
            OptimizerConfig::Adam { beta1, beta2, epsilon, .. }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) =>
            {
                Err(Error::config("adam betas must lie in [0, 1) and epsilon must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-parameter optimiser memory: velocity for SGD, moments for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotState {
    first: Tensor,
    second: Tensor,
}

impl SlotState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            first: Tensor::zeros(shape),
            second: Tensor::zeros(shape),
        }
    }
}

/// One update of a single parameter tensor; `step` is 1 on the first call.
pub fn optimizer_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut SlotState,
    hyper: &OptimizerConfig,
    step: u64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.first.shape() {
        return Err(Error::contract(format!(
            "optimizer step: parameter {:?}, gradient {:?}, state {:?} disagree",
            param.shape(),
            grad.shape(),
            state.first.shape()
        )));
    }
    match *hyper {
        OptimizerConfig::Sgd { lr, momentum } => {
            let v = state.first.data_mut();
            for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(v) {
                *v = g + momentum * *v;
                *p -= lr * *v;
            }
        }
        OptimizerConfig::Adam {
            lr,
            beta1,
            beta2,
            epsilon,
        } => {
            let c1 = 1.0 - beta1.powi(step as i32);
            let c2 = 1.0 - beta2.powi(step as i32);
            let SlotState { first, second } = state;
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(first.data_mut())
                .zip(second.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
    Ok(())
}

/// Optimiser over a model's unfrozen parameters.
pub struct Optimizer {
    hyper: OptimizerConfig,
    state: BTreeMap<ParamId, SlotState>,
    step: u64,
}

impl Optimizer {
    pub fn new(hyper: OptimizerConfig) -> Self {
        Self {
            hyper,
            state: BTreeMap::new(),
            step: 0,
        }
    }

    /// Applies `grads` to the model. Gradients for frozen layers are a
    /// contract violation.
    pub fn step(&mut self, model: &mut LayeredModel, grads: &GradientMap) -> Result<()> {
        self.step += 1;
        for (id, grad) in grads {
            let layer = model.layer_mut(id.layer);
            if layer.frozen {
                return Err(Error::contract(format!("gradient supplied for frozen layer {}", id.layer)));
            }
            let param = layer
                .params
                .get_mut(id.slot)
                .ok_or_else(|| Error::contract(format!("no parameter slot {:?}", id)))?;
            let state = self
                .state
                .entry(*id)
                .or_insert_with(|| SlotState::zeros(param.shape()));
            optimizer_step(param, grad, state, &self.hyper, self.step)?;
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut GradientMap, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.values_mut() {
            g.scale(factor);
        }
    }
    norm
}
