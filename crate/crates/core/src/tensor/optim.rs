use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Optimizer family plus its fixed hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Adadelta { rho: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

/// Descriptor of an optimizer: family, learning rate, learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64, decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::adam(),
            learning_rate,
            decay,
        }
    }

    pub fn adadelta(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::adadelta(),
            learning_rate,
            decay: 0.0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.decay < 0.0 {
            return Err(Error::Config(format!(
                "decay must be non-negative, got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// Per-parameter auxiliary arrays, aligned with one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Slots {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64> },
    Adadelta { acc_grad: Vec<f64>, acc_update: Vec<f64> },
}

/// Mutable optimizer state across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    slots: Vec<Slots>,
}

impl OptimizerState {
    /// `sizes` lists the element count of each parameter, in update order.
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        let slots = sizes
            .iter()
            .map(|&n| match config.kind {
                OptimizerKind::Sgd => Slots::Sgd,
                OptimizerKind::Adam { .. } => Slots::Adam {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
                OptimizerKind::Adadelta { .. } => Slots::Adadelta {
                    acc_grad: vec![0.0; n],
                    acc_update: vec![0.0; n],
                },
            })
            .collect();
        Ok(OptimizerState {
            config,
            step: 0,
            slots,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Apply one optimizer update. `params` and `grads` are aligned with the
/// state's slot order; a missing gradient is a training error.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut [&mut [f64]],
    grads: &[Option<&[f64]>],
) -> Result<()> {
    if params.len() != state.slots.len() || grads.len() != state.slots.len() {
        return Err(Error::Training(format!(
            "optimizer expects {} parameters, got {} with {} gradients",
            state.slots.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        match g {
            None => {
                return Err(Error::Training(format!(
                    "missing gradient for parameter {i}"
                )))
            }
            Some(g) if g.len() != params[i].len() => {
                return Err(Error::Training(format!(
                    "gradient length {} does not match parameter length {}",
                    g.len(),
                    params[i].len()
                )))
            }
            _ => {}
        }
    }
    state.step += 1;
    let t = state.step;
    // Keras-style schedule: lr_t = lr / (1 + decay * iterations).
    let lr = state.config.learning_rate / (1.0 + state.config.decay * (t - 1) as f64);

    for ((slots, param), grad) in state.slots.iter_mut().zip(params).zip(grads) {
        let grad = grad.expect("checked above");
        match (slots, &state.config.kind) {
            (Slots::Sgd, OptimizerKind::Sgd) => {
                for (w, &g) in param.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            (Slots::Adam { m, v }, OptimizerKind::Adam { beta1, beta2, epsilon }) => {
                let bc1 = 1.0 - beta1.powi(t as i32);
                let bc2 = 1.0 - beta2.powi(t as i32);
                for (((w, &g), mi), vi) in param.iter_mut().zip(grad).zip(m).zip(v) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            (
                Slots::Adadelta {
                    acc_grad,
                    acc_update,
                },
                OptimizerKind::Adadelta { rho, epsilon },
            ) => {
                for (((w, &g), ag), au) in param.iter_mut().zip(grad).zip(acc_grad).zip(acc_update)
                {
                    *ag = rho * *ag + (1.0 - rho) * g * g;
                    let update = (*au + epsilon).sqrt() / (*ag + epsilon).sqrt() * g;
                    *au = rho * *au + (1.0 - rho) * update * update;
                    *w -= lr * update;
                }
            }
            _ => unreachable!("slots constructed from the same config"),
        }
    }
    Ok(())
}
