//! Non-learned iterative deconvolution baselines.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft_conv::{BlurOperator, Psf};
use crate::image::Image;

/// Division guard for Richardson-Lucy.
pub const RL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub nonneg_projection: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: 0.8,
            iterations: 1000,
            nonneg_projection: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if !self.nonneg_projection && self.step_size >= 2.0 {
            return Err(Error::InvalidInput(format!(
                "step_size {} is unstable without projection (need < 2)",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Landweber iteration `x ← x + γ Hᵀ(y − Hx)` started from `x = y`.
pub fn landweber(y: &Image, h: &Psf, cfg: &SolverConfig) -> Result<Image> {
    landweber_traced(y, h, cfg).map(|(x, _)| x)
}

/// Like [`landweber`], also returning `‖y − Hx⁽ᵏ⁾‖²` for `k = 0..=N`.
pub fn landweber_traced(y: &Image, h: &Psf, cfg: &SolverConfig) -> Result<(Image, Vec<f64>)> {
    cfg.validate()?;
    let op = BlurOperator::new(h, y.shape())?;
    let yd = y.data();
    let mut x = yd.to_vec();
    let mut residuals = Vec::with_capacity(cfg.iterations + 1);
    for k in 0..=cfg.iterations {
        let hx = op.apply_raw(&x);
        let r: Vec<f64> = yd.iter().zip(&hx).map(|(a, b)| a - b).collect();
        residuals.push(r.iter().map(|v| v * v).sum());
        if k == cfg.iterations {
            break;
        }
        let step = op.adjoint_raw(&r);
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += cfg.step_size * si;
            if cfg.nonneg_projection && *xi < 0.0 {
                *xi = 0.0;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("landweber iteration {}", k + 1)));
        }
    }
    Ok((Image::new(y.height(), y.width(), x)?, residuals))
}

/// Richardson-Lucy `x ← x · Hᵀ(y / (Hx + ε))` started from `x = y`.
/// Negative observations are clamped to zero.
pub fn richardson_lucy(y: &Image, h: &Psf, iterations: usize) -> Result<Image> {
    if iterations == 0 {
        return Err(Error::InvalidInput("iterations must be positive".into()));
    }
    let op = BlurOperator::new(h, y.shape())?;
    let y = if y.min() < 0.0 {
        warn!("richardson_lucy: clamping negative observations to zero");
        y.map(|v| v.max(0.0))
    } else {
        y.clone()
    };
    let yd = y.data();
    let mut x = yd.to_vec();
    for k in 0..iterations {
        let hx = op.apply_raw(&x);
        let ratio: Vec<f64> = yd
            .iter()
            .zip(&hx)
            .map(|(a, b)| a / (b + RL_EPSILON))
            .collect();
        let correction = op.adjoint_raw(&ratio);
        for (xi, ci) in x.iter_mut().zip(&correction) {
            // Tiny negative FFT round-off must not flip signs.
            *xi = (*xi * ci).max(0.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "richardson-lucy iteration {}",
                k + 1
            )));
        }
    }
    Image::new(y.height(), y.width(), x)
}
