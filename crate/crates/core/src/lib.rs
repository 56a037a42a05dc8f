//! Self-supervised non-blind image deconvolution.
//!
//! The centerpiece is [`model`], a three-stage unrolled Landweber network
//! whose parameters are fitted to a single blurred image and its known
//! kernel. Around it sit the blur operator ([`fft_conv`]), classic
//! baselines ([`solvers`]), a small reverse-mode differentiation engine
//! ([`autodiff`]), RMSprop ([`optim`]), wavelet background removal
//! ([`background`]) and a benchmark harness ([`bench`]).

pub mod autodiff;
pub mod background;
pub mod bench;
pub mod error;
pub mod fft_conv;
pub mod image;
pub mod model;
pub mod optim;
pub mod solvers;

pub use error::{Error, Result};
