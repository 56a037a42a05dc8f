use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::network::{build_forward, build_loss, LossWeights, ParamNodes};
use super::params::DeladParams;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::fft_conv::{BlurOperator, Psf};
use crate::image::{convert_color, psnr, ssim, ColorImage, ColorSpace, Image};
use crate::optim::{rmsprop_step, LrSchedule, RmspropState, RMSPROP_DECAY, RMSPROP_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    /// Landweber step size γ.
    pub step_size: f64,
    /// ψ₁, weight of the Hessian regularizer.
    pub hessian_weight: f64,
    /// ψ₂, weight of the sparsity term; only used when `sparsity_enabled`.
    pub sparsity_weight: f64,
    pub sparsity_enabled: bool,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            initial_lr: 0.05,
            lr_milestones: vec![1000, 1500],
            lr_decay: 0.2,
            step_size: 0.8,
            hessian_weight: 1e-6,
            sparsity_weight: 0.0,
            sparsity_enabled: false,
            rmsprop_decay: RMSPROP_DECAY,
            rmsprop_epsilon: RMSPROP_EPSILON,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for background-removed microscopy frames: shorter schedule,
    /// stronger Hessian weight and the sparsity prior switched on.
    pub fn edof() -> Self {
        Self {
            epochs: 1000,
            initial_lr: 5e-3,
            lr_milestones: vec![700],
            lr_decay: 0.2,
            hessian_weight: 3e-6,
            sparsity_weight: 0.2,
            sparsity_enabled: true,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial_lr: self.initial_lr,
            milestones: self.lr_milestones.clone(),
            decay: self.lr_decay,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            hessian: self.hessian_weight,
            sparsity: self.sparsity_enabled.then_some(self.sparsity_weight),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size < 2.0) {
            return bad(format!(
                "step_size must lie in (0, 2), got {}",
                self.step_size
            ));
        }
        if !(self.hessian_weight >= 0.0 && self.hessian_weight.is_finite()) {
            return bad(format!(
                "hessian_weight must be >= 0, got {}",
                self.hessian_weight
            ));
        }
        if !(self.sparsity_weight >= 0.0 && self.sparsity_weight.is_finite()) {
            return bad(format!(
                "sparsity_weight must be >= 0, got {}",
                self.sparsity_weight
            ));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad(format!(
                "rmsprop_decay must lie in (0, 1), got {}",
                self.rmsprop_decay
            ));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad(format!(
                "rmsprop_epsilon must be positive, got {}",
                self.rmsprop_epsilon
            ));
        }
        self.schedule().validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// `−SSIM(H x̂, y)`.
    pub data_term: f64,
    /// Unweighted Hessian regularizer.
    pub hessian: f64,
    /// Unweighted sparsity term, when enabled.
    pub sparsity: Option<f64>,
    /// Metrics against the ground truth, when one was supplied.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Estimate produced by the final epoch's forward pass.
    pub estimate: Image,
    pub history: TrainHistory,
    /// Parameters after the final update.
    pub params: DeladParams,
}

/// Fits a fresh network to `observed` and returns the final-epoch estimate.
///
/// `ground_truth` only feeds the logged metrics; it never touches the loss.
pub fn train(
    observed: &Image,
    psf: &Psf,
    cfg: &TrainConfig,
    ground_truth: Option<&Image>,
) -> Result<TrainOutcome> {
    train_with_observer(observed, psf, cfg, ground_truth, |_| {})
}

/// [`train`] with a callback invoked after every epoch's record is made.
pub fn train_with_observer(
    observed: &Image,
    psf: &Psf,
    cfg: &TrainConfig,
    ground_truth: Option<&Image>,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(gt) = ground_truth {
        gt.check_same_shape(observed)?;
    }
    let schedule = cfg.schedule();
    let weights = cfg.loss_weights();
    let blur = Arc::new(BlurOperator::new(psf, observed.shape())?);
    let observed_tensor = Tensor::from_image(observed);

    let mut params = DeladParams::init(observed.shape(), cfg.seed)?;
    let mut states: Vec<RmspropState> = params
        .tensors()
        .iter()
        .map(|t| RmspropState {
            decay: cfg.rmsprop_decay,
            epsilon: cfg.rmsprop_epsilon,
            ..RmspropState::new(t.len())
        })
        .collect();
    let mut history = TrainHistory::default();
    let mut last_estimate: Option<Image> = None;

    for epoch in 0..cfg.epochs {
        let diverged = |last: &Option<Image>| Error::Diverged {
            epoch,
            last_finite: last.clone().map(Box::new),
        };
        let lr = schedule.lr_at_epoch(epoch);

        let mut graph = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &params, true)?;
        let y = graph.leaf(observed_tensor.clone(), false)?;
        let built = build_forward(&mut graph, &nodes, y, &blur, cfg.step_size).and_then(|fwd| {
            Ok((
                fwd,
                build_loss(&mut graph, fwd.estimate, y, &blur, weights)?,
            ))
        });
        let (fwd, loss) = match built {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(diverged(&last_estimate)),
            Err(e) => return Err(e),
        };
        let total = graph.value(loss.total).item();
        if !total.is_finite() {
            return Err(diverged(&last_estimate));
        }
        let estimate = graph.value(fwd.estimate).to_image()?;

        let (gt_psnr, gt_ssim) = match ground_truth {
            Some(gt) => (Some(psnr(&estimate, gt)?), Some(ssim(&estimate, gt)?)),
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss: total,
            data_term: graph.value(loss.data).item(),
            hessian: graph.value(loss.hessian).item(),
            sparsity: loss.sparsity.map(|s| graph.value(s).item()),
            psnr: gt_psnr,
            ssim: gt_ssim,
        };
        observer(&record);
        history.epochs.push(record);

        graph.backward(loss.total)?;
        for ((param, id), state) in params
            .tensors_mut()
            .into_iter()
            .zip(nodes.ids())
            .zip(&mut states)
        {
            let grad = graph
                .grad(id)
                .ok_or_else(|| Error::Graph("parameter received no gradient".into()))?;
            rmsprop_step(param.data_mut(), grad.data(), state, lr).map_err(|e| match e {
                Error::NonFinite(_) => diverged(&Some(estimate.clone())),
                other => other,
            })?;
        }
        last_estimate = Some(estimate);
    }

    Ok(TrainOutcome {
        estimate: last_estimate.expect("at least one epoch"),
        history,
        params,
    })
}

/// Deconvolves the luma plane of a YCbCr image; chroma passes through
/// untouched.
pub fn deconvolve_ycbcr(
    img: &ColorImage,
    psf: &Psf,
    cfg: &TrainConfig,
) -> Result<(ColorImage, TrainHistory)> {
    if img.space() != ColorSpace::YCbCr {
        return Err(Error::InvalidInput("expected a YCbCr image".into()));
    }
    let outcome = train(img.plane(0), psf, cfg, None)?;
    let [_, cb, cr] = img.planes().clone();
    Ok((
        ColorImage::new([outcome.estimate, cb, cr], ColorSpace::YCbCr)?,
        outcome.history,
    ))
}

/// RGB in, RGB out: converts to YCbCr, deconvolves Y only, converts back.
pub fn deconvolve_color(
    img: &ColorImage,
    psf: &Psf,
    cfg: &TrainConfig,
) -> Result<(ColorImage, TrainHistory)> {
    if img.space() != ColorSpace::Rgb {
        return Err(Error::InvalidInput("expected an RGB image".into()));
    }
    let ycc = convert_color(img, ColorSpace::YCbCr);
    let (restored, history) = deconvolve_ycbcr(&ycc, psf, cfg)?;
    Ok((convert_color(&restored, ColorSpace::Rgb), history))
}
