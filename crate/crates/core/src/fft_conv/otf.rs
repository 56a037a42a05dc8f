use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Psf;
use crate::error::{Error, Result};

/// Forward and inverse 2D transform plans for one image shape.
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        let mut real = RealFftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            r2c: real.plan_fft_forward(width),
            c2r: real.plan_fft_inverse(width),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Unnormalized forward transform of a real row-major grid.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let (h, w) = (self.height, self.width);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.row_fwd.process(&mut buf);
        let mut t = transpose(&buf, h, w);
        self.col_fwd.process(&mut t);
        transpose(&t, w, h)
    }

    /// Inverse transform, scaled by `1/N`, keeping only the real part.
    pub fn inverse_real(&self, spectrum: Vec<Complex<f64>>) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut t = transpose(&spectrum, h, w);
        self.col_inv.process(&mut t);
        let mut buf = transpose(&t, w, h);
        self.row_inv.process(&mut buf);
        let scale = 1.0 / (h * w) as f64;
        buf.into_iter().map(|c| c.re * scale).collect()
    }

    /// Columns of the half spectrum kept by real-input transforms.
    fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    /// Non-negative horizontal frequencies only, column-major.
    fn forward_half(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let (h, w, hw) = (self.height, self.width, self.half_width());
        let mut rows = vec![Complex::new(0.0, 0.0); h * hw];
        let mut input = x.to_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (src, dst) in input.chunks_exact_mut(w).zip(rows.chunks_exact_mut(hw)) {
            self.r2c
                .process_with_scratch(src, dst, &mut scratch)
                .expect("buffer lengths match the plan");
        }
        let mut t = transpose(&rows, h, hw);
        let mut scratch = vec![Complex::new(0.0, 0.0); self.col_fwd.get_inplace_scratch_len()];
        self.col_fwd.process_with_scratch(&mut t, &mut scratch);
        t
    }

    fn inverse_half(&self, mut t: Vec<Complex<f64>>) -> Vec<f64> {
        let (h, w, hw) = (self.height, self.width, self.half_width());
        let mut scratch = vec![Complex::new(0.0, 0.0); self.col_inv.get_inplace_scratch_len()];
        self.col_inv.process_with_scratch(&mut t, &mut scratch);
        let mut rows = transpose(&t, hw, h);
        let mut out = vec![0.0; h * w];
        let mut scratch = self.c2r.make_scratch_vec();
        for (src, dst) in rows.chunks_exact_mut(hw).zip(out.chunks_exact_mut(w)) {
            src[0].im = 0.0;
            if w % 2 == 0 {
                src[hw - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(src, dst, &mut scratch)
                .expect("buffer lengths match the plan");
        }
        let scale = 1.0 / (h * w) as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }
}

const BLOCK: usize = 16;

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut dst = vec![Complex::new(0.0, 0.0); rows * cols];
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

/// Frequency response of a [`Psf`] zero-padded to an image shape, with the
/// kernel center moved to the origin.
#[derive(Debug)]
pub struct Otf {
    plan: Arc<Fft2>,
    /// Half spectrum, column-major.
    spectrum: Vec<Complex<f64>>,
}

impl Otf {
    pub fn new(psf: &Psf, shape: (usize, usize)) -> Result<Self> {
        Self::with_plan(psf, Arc::new(Fft2::new(shape.0, shape.1)))
    }

    pub fn with_plan(psf: &Psf, plan: Arc<Fft2>) -> Result<Self> {
        let padded = pad_centered(psf, plan.shape())?;
        let spectrum = plan.forward_half(&padded);
        Ok(Self { plan, spectrum })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.plan.shape()
    }

    /// Full response in row-major order.
    pub fn spectrum(&self) -> Vec<Complex<f64>> {
        let (h, w) = self.shape();
        let hw = self.plan.half_width();
        let mut out = vec![Complex::new(0.0, 0.0); h * w];
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = if c < hw {
                    self.spectrum[c * h + r]
                } else {
                    self.spectrum[(w - c) * h + (h - r) % h].conj()
                };
            }
        }
        out
    }

    pub fn plan(&self) -> &Fft2 {
        &self.plan
    }

    /// Largest magnitude of the response, i.e. the spectral norm of the
    /// circulant operator.
    pub fn max_gain(&self) -> f64 {
        self.spectrum.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Multiplies `x` by the response (or its conjugate) in the frequency domain.
    pub(crate) fn filter(&self, x: &[f64], conjugate: bool) -> Vec<f64> {
        let mut spec = self.plan.forward_half(x);
        if conjugate {
            spec.iter_mut()
                .zip(&self.spectrum)
                .for_each(|(s, h)| *s *= h.conj());
        } else {
            spec.iter_mut()
                .zip(&self.spectrum)
                .for_each(|(s, h)| *s *= h);
        }
        self.plan.inverse_half(spec)
    }
}

/// Embeds the kernel in a zero grid of `shape` with its center at `(0, 0)`,
/// wrapping negative offsets around.
pub fn pad_centered(psf: &Psf, shape: (usize, usize)) -> Result<Vec<f64>> {
    let (h, w) = shape;
    if psf.height() > h || psf.width() > w {
        return Err(Error::KernelTooLarge {
            kernel: format!("{}x{}", psf.height(), psf.width()),
            image: format!("{h}x{w}"),
        });
    }
    let (cr, cc) = psf.center();
    let mut out = vec![0.0; h * w];
    for r in 0..psf.height() {
        for c in 0..psf.width() {
            let rr = (r + h - cr) % h;
            let cc2 = (c + w - cc) % w;
            out[rr * w + cc2] += psf.get(r, c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct OtfKey {
    kernel_shape: (usize, usize),
    kernel_bits: Vec<u64>,
    image_shape: (usize, usize),
}

impl OtfKey {
    fn new(psf: &Psf, image_shape: (usize, usize)) -> Self {
        Self {
            kernel_shape: psf.shape(),
            kernel_bits: psf.data().iter().map(|v| v.to_bits()).collect(),
            image_shape,
        }
    }
}

/// Read-mostly map from (kernel, image shape) to its [`Otf`]. Transform
/// plans are shared per image shape.
#[derive(Debug, Default)]
pub struct OtfCache {
    plans: RwLock<HashMap<(usize, usize), Arc<Fft2>>>,
    otfs: RwLock<HashMap<OtfKey, Arc<Otf>>>,
}

impl OtfCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide cache used by the free convolution functions.
    pub fn global() -> &'static OtfCache {
        static CACHE: OnceLock<OtfCache> = OnceLock::new();
        CACHE.get_or_init(OtfCache::new)
    }

    pub fn plan(&self, shape: (usize, usize)) -> Arc<Fft2> {
        if let Some(p) = self.plans.read().expect("plan cache poisoned").get(&shape) {
            return p.clone();
        }
        let fresh = Arc::new(Fft2::new(shape.0, shape.1));
        self.plans
            .write()
            .expect("plan cache poisoned")
            .entry(shape)
            .or_insert(fresh)
            .clone()
    }

    pub fn get(&self, psf: &Psf, shape: (usize, usize)) -> Result<Arc<Otf>> {
        let key = OtfKey::new(psf, shape);
        if let Some(otf) = self.otfs.read().expect("otf cache poisoned").get(&key) {
            return Ok(otf.clone());
        }
        let fresh = Arc::new(Otf::with_plan(psf, self.plan(shape))?);
        Ok(self
            .otfs
            .write()
            .expect("otf cache poisoned")
            .entry(key)
            .or_insert(fresh)
            .clone())
    }

    pub fn len(&self) -> usize {
        self.otfs.read().expect("otf cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
