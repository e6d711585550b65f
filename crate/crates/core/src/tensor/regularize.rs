use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// L1/L2 penalties, dropout probability, and early-stopping patience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub l1: f64,
    pub l2: f64,
    pub dropout_p: f64,
    pub early_stop_patience: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            l1: 0.0,
            l2: 0.0,
            dropout_p: 0.0,
            early_stop_patience: 0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l1 < 0.0 || self.l2 < 0.0 {
            return Err(Error::Config("L1/L2 factors must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Add the penalty gradient `2*l2*w + l1*sign(w)` in place.
    pub fn apply_penalty_gradient(&self, weights: &[f64], grad: &mut [f64]) {
        if self.l1 == 0.0 && self.l2 == 0.0 {
            return;
        }
        for (g, &w) in grad.iter_mut().zip(weights) {
            *g += 2.0 * self.l2 * w + self.l1 * w.signum();
        }
    }

    /// Penalty value `l2*sum(w^2) + l1*sum(|w|)` for loss reporting.
    pub fn penalty(&self, weights: &[f64]) -> f64 {
        if self.l1 == 0.0 && self.l2 == 0.0 {
            return 0.0;
        }
        weights
            .iter()
            .map(|&w| self.l2 * w * w + self.l1 * w.abs())
            .sum()
    }
}

/// Verdict of [`early_stop_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop,
}

/// Stop once the best validation loss has gone `max(patience, 1)` consecutive
/// epochs without strict improvement. With patience 0 a single non-improving
/// epoch stops the run.
pub fn early_stop_check(history: &[f64], patience: usize) -> EarlyStop {
    assert!(!history.is_empty(), "early_stop_check on empty history");
    let mut best = history[0];
    let mut since_best = 0usize;
    for &loss in &history[1..] {
        if loss < best {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    if since_best >= patience.max(1) {
        EarlyStop::Stop
    } else {
        EarlyStop::Continue
    }
}
