//! RMSprop with a milestone learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPSILON: f64 = 1e-8;

/// Piecewise-constant schedule: the rate is multiplied by `decay` at every
/// milestone epoch that has been reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, milestones: Vec<usize>, decay: f64) -> Result<Self> {
        let s = Self {
            initial_lr,
            milestones,
            decay,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            initial_lr: lr,
            milestones: vec![],
            decay: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidInput(format!(
                "lr decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "lr milestones must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial_lr * self.decay.powi(passed as i32)
    }
}

/// Running average of squared gradients for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub square_avg: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
}

impl RmspropState {
    pub fn new(len: usize) -> Self {
        Self {
            square_avg: vec![0.0; len],
            decay: RMSPROP_DECAY,
            epsilon: RMSPROP_EPSILON,
        }
    }
}

/// `v ← ρv + (1 − ρ)g²; θ ← θ − lr·g / (√v + ε)`, elementwise.
pub fn rmsprop_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut RmspropState,
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.square_avg.len() {
        return Err(Error::shape(
            format!("{} elements", param.len()),
            format!("grad {} / state {}", grad.len(), state.square_avg.len()),
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient element {i}")));
    }
    let (rho, eps) = (state.decay, state.epsilon);
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(state.square_avg.iter_mut()) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *p -= lr * g / (v.sqrt() + eps);
    }
    Ok(())
}
