//! The blur operator `H` and its adjoint as circular convolutions computed
//! in the frequency domain.
//!
//! Boundaries are periodic. Kernels are centered on their middle pixel, so a
//! delta kernel is the identity, and the adjoint is exactly the transpose of
//! the forward operator under the standard inner product.

mod otf;
mod psf;

use std::sync::Arc;

pub use otf::{pad_centered, Fft2, Otf, OtfCache};
pub use psf::{load_kernel, parse_kernel_text, Psf};

use crate::error::Result;
use crate::image::Image;

/// A blur kernel bound to an image shape.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    psf: Psf,
    otf: Arc<Otf>,
}

impl BlurOperator {
    /// Builds the operator through the process-wide [`OtfCache`].
    pub fn new(psf: &Psf, shape: (usize, usize)) -> Result<Self> {
        Self::with_cache(psf, shape, OtfCache::global())
    }

    pub fn with_cache(psf: &Psf, shape: (usize, usize), cache: &OtfCache) -> Result<Self> {
        Ok(Self {
            psf: psf.clone(),
            otf: cache.get(psf, shape)?,
        })
    }

    pub fn psf(&self) -> &Psf {
        &self.psf
    }

    pub fn otf(&self) -> &Otf {
        &self.otf
    }

    pub fn shape(&self) -> (usize, usize) {
        self.otf.shape()
    }

    /// `H x` on a raw row-major grid of the operator's shape.
    pub fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.shape().0 * self.shape().1);
        self.otf.filter(x, false)
    }

    /// `Hᵀ x` on a raw row-major grid of the operator's shape.
    pub fn adjoint_raw(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.shape().0 * self.shape().1);
        self.otf.filter(x, true)
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        Image::new(x.height(), x.width(), self.apply_raw(x.data()))
    }

    pub fn adjoint(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        Image::new(x.height(), x.width(), self.adjoint_raw(x.data()))
    }

    fn check(&self, x: &Image) -> Result<()> {
        let (h, w) = self.shape();
        if x.shape() != (h, w) {
            return Err(crate::Error::shape(
                format!("{h}x{w}"),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        Ok(())
    }
}

/// Circular convolution of `x` with `h`.
pub fn convolve(x: &Image, h: &Psf) -> Result<Image> {
    BlurOperator::new(h, x.shape())?.apply(x)
}

/// Circular correlation with `h`: the adjoint of [`convolve`].
pub fn adjoint_convolve(x: &Image, h: &Psf) -> Result<Image> {
    BlurOperator::new(h, x.shape())?.adjoint(x)
}
