//! Per-group optimizers: SGD with momentum for the network parameters,
//! SGD or Adam for the confusion and mixture logits.

use crate::model::PrismModel;
use crate::training::backward::Gradients;
use crate::training::TrainConfig;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer choice for the confusion/mixture logit groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerB {
    Sgd,
    Adam,
}

impl OptimizerB {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerB::Sgd => "sgd",
            OptimizerB::Adam => "adam",
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerB::Sgd),
            "adam" => Some(OptimizerB::Adam),
            _ => None,
        }
    }
}

/// One SGD-with-momentum step. Weight decay enters as an L2 gradient term.
pub fn sgd_momentum_update(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for i in 0..param.len() {
        let g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

/// One Adam step with bias correction; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    weight_decay: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i] + weight_decay * param[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

enum GroupState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
}

struct Slot {
    name: String,
    state: GroupState,
}

/// Optimizer state aligned with the model's parameter groups.
pub struct Optimizer {
    slots: Vec<Slot>,
    adam_t: u64,
}

fn is_b_group(name: &str) -> bool {
    name.starts_with("confusion") || name == "mixture"
}

impl Optimizer {
    pub fn new(model: &PrismModel, config: &TrainConfig) -> Self {
        let slots = model
            .param_groups()
            .into_iter()
            .map(|(name, values)| {
                let state = if is_b_group(&name) && config.optimizer_b == OptimizerB::Adam {
                    GroupState::Adam {
                        m: vec![0.0; values.len()],
                        v: vec![0.0; values.len()],
                    }
                } else {
                    GroupState::Sgd {
                        velocity: vec![0.0; values.len()],
                    }
                };
                Slot { name, state }
            })
            .collect();
        Self { slots, adam_t: 0 }
    }

    /// Applies one update. The mixture logits are skipped when the model
    /// holds them fixed.
    pub fn step(&mut self, model: &mut PrismModel, grads: &Gradients, config: &TrainConfig) {
        self.adam_t += 1;
        let d_trainable = model.d_trainable;
        let params = model.param_groups_mut();
        let grad_groups = grads.groups();
        assert_eq!(params.len(), grad_groups.len(), "group count mismatch");
        assert_eq!(params.len(), self.slots.len(), "optimizer state mismatch");

        for (((name, param), (gname, grad)), slot) in params
            .into_iter()
            .zip(grad_groups)
            .zip(self.slots.iter_mut())
        {
            assert_eq!(name, gname, "group order mismatch");
            assert_eq!(name, slot.name, "optimizer slot mismatch");
            if name == "mixture" && !d_trainable {
                continue;
            }
            let (lr, wd) = if is_b_group(&name) {
                (config.lr_b, config.weight_decay_b)
            } else {
                (config.lr_theta, config.weight_decay_theta)
            };
            match &mut slot.state {
                GroupState::Sgd { velocity } => {
                    sgd_momentum_update(param, grad, velocity, lr, config.momentum, wd);
                }
                GroupState::Adam { m, v } => {
                    adam_update(param, grad, m, v, self.adam_t, lr, wd);
                }
            }
        }
    }
}
