//! The unrolled Landweber network, its loss and the per-image training loop.
//!
//! Three Landweber steps are unrolled with a learned starting estimate and
//! learned additive corrections. Each step is projected onto nonnegative
//! values, refined by a 3x3 convolution with sigmoid activation, and the
//! three stage outputs are fused into the final estimate. Parameters are
//! fitted to one blurred image by minimizing `−SSIM(H x̂, y)` plus optional
//! Hessian and sparsity regularizers with RMSprop.

mod network;
mod params;
mod suite;
mod train;

pub use network::{
    build_forward, build_hessian, build_loss, build_sparsity, forward, hessian_reg, loss_value,
    sparsity_term, ForwardNodes, ForwardOutput, LossNodes, LossWeights, ParamNodes,
};
pub use params::{parameter_count, ConvLayer, DeladParams, STAGES};
pub use suite::{gradient_suite, SuiteResult, LINEAR_TOLERANCE, NONLINEAR_TOLERANCE};
pub use train::{
    deconvolve_color, deconvolve_ycbcr, train, train_with_observer, EpochRecord, TrainConfig,
    TrainHistory, TrainOutcome,
};
