//! Wavelet background estimation for microscopy frames.
//!
//! The background is the smooth, low-frequency haze under sparse bright
//! structures. It is found by repeatedly clipping the image to its mean,
//! keeping only the coarsest Daubechies-6 approximation band and bounding
//! the result by `√y/2`.

use log::warn;

use crate::error::{Error, Result};
use crate::image::Image;

/// Default decomposition depth for background estimation.
pub const BACKGROUND_LEVELS: usize = 7;
pub const BACKGROUND_ITERATIONS: usize = 3;

/// Daubechies-6 scaling filter (12 taps, orthonormal).
const DB6: [f64; 12] = [
    0.11154074335010947,
    0.49462389039845306,
    0.7511339080210954,
    0.31525035170919763,
    -0.22626469396543983,
    -0.12976686756726194,
    0.09750160558732304,
    0.027522865530305727,
    -0.03158203931748603,
    0.0005538422011614961,
    0.004777257510945511,
    -0.0010773010853084796,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletFamily {
    Daubechies6,
}

impl WaveletFamily {
    pub fn scaling_filter(self) -> &'static [f64] {
        match self {
            WaveletFamily::Daubechies6 => &DB6,
        }
    }

    fn wavelet_filter(self) -> Vec<f64> {
        let h = self.scaling_filter();
        let n = h.len();
        (0..n)
            .map(|k| {
                if k % 2 == 0 {
                    h[n - 1 - k]
                } else {
                    -h[n - 1 - k]
                }
            })
            .collect()
    }
}

/// Detail bands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    /// Low-pass along rows, high-pass along columns.
    pub horizontal: Image,
    /// High-pass along rows, low-pass along columns.
    pub vertical: Image,
    pub diagonal: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub family: WaveletFamily,
    pub approximation: Image,
    /// `details[0]` is level 1, the finest.
    pub details: Vec<DetailBands>,
    /// Shape of the image before padding.
    pub original_shape: (usize, usize),
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Copy with every detail band zeroed.
    pub fn approximation_only(&self) -> Self {
        let zero = |b: &Image| Image::zeros(b.height(), b.width());
        Self {
            details: self
                .details
                .iter()
                .map(|d| DetailBands {
                    horizontal: zero(&d.horizontal),
                    vertical: zero(&d.vertical),
                    diagonal: zero(&d.diagonal),
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Sum of squared coefficients over all bands.
    pub fn energy(&self) -> f64 {
        let sq = |b: &Image| b.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.approximation)
            + self
                .details
                .iter()
                .map(|d| sq(&d.horizontal) + sq(&d.vertical) + sq(&d.diagonal))
                .sum::<f64>()
    }
}

/// Deepest decomposition supported for an image of this shape.
pub fn max_levels(shape: (usize, usize)) -> usize {
    let m = shape.0.min(shape.1);
    if m == 0 {
        0
    } else {
        m.ilog2() as usize
    }
}

fn padded_len(n: usize, levels: usize) -> usize {
    let block = 1usize << levels;
    n.div_ceil(block) * block
}

fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let j = i % period;
    if j < n {
        j
    } else {
        period - 1 - j
    }
}

fn analyze(x: &[f64], lo: &[f64], hi: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    let n = x.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (t, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * k + t) % n];
            a += l * v;
            d += h * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
}

fn synthesize(approx: &[f64], detail: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.fill(0.0);
    for k in 0..n / 2 {
        for (t, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            out[(2 * k + t) % n] += l * approx[k] + h * detail[k];
        }
    }
}

/// One 2D analysis step on a row-major `h x w` block.
fn dwt2_level(x: &[f64], h: usize, w: usize, lo: &[f64], hi: &[f64]) -> [Vec<f64>; 4] {
    let (h2, w2) = (h / 2, w / 2);
    let mut row_lo = vec![0.0; h * w2];
    let mut row_hi = vec![0.0; h * w2];
    for r in 0..h {
        analyze(
            &x[r * w..(r + 1) * w],
            lo,
            hi,
            &mut row_lo[r * w2..(r + 1) * w2],
            &mut row_hi[r * w2..(r + 1) * w2],
        );
    }
    let mut bands = [
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
        vec![0.0; h2 * w2],
    ];
    let mut col = vec![0.0; h];
    let (mut a, mut d) = (vec![0.0; h2], vec![0.0; h2]);
    for (src, (ia, id)) in [(&row_lo, (0, 1)), (&row_hi, (2, 3))] {
        for c in 0..w2 {
            for r in 0..h {
                col[r] = src[r * w2 + c];
            }
            analyze(&col, lo, hi, &mut a, &mut d);
            for r in 0..h2 {
                bands[ia][r * w2 + c] = a[r];
                bands[id][r * w2 + c] = d[r];
            }
        }
    }
    bands
}

fn idwt2_level(bands: [&[f64]; 4], h: usize, w: usize, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut row_lo = vec![0.0; h * w2];
    let mut row_hi = vec![0.0; h * w2];
    let mut col = vec![0.0; h];
    let (mut a, mut d) = (vec![0.0; h2], vec![0.0; h2]);
    for (dst, (ia, id)) in [(&mut row_lo, (0, 1)), (&mut row_hi, (2, 3))] {
        for c in 0..w2 {
            for r in 0..h2 {
                a[r] = bands[ia][r * w2 + c];
                d[r] = bands[id][r * w2 + c];
            }
            synthesize(&a, &d, lo, hi, &mut col);
            for r in 0..h {
                dst[r * w2 + c] = col[r];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        synthesize(
            &row_lo[r * w2..(r + 1) * w2],
            &row_hi[r * w2..(r + 1) * w2],
            lo,
            hi,
            &mut out[r * w..(r + 1) * w],
        );
    }
    out
}

/// Multilevel separable 2D DWT with periodic boundary.
///
/// Sides that are not a multiple of `2^levels` are first extended by
/// symmetric reflection at the bottom and right; [`idwt2`] crops back.
pub fn dwt2(x: &Image, levels: usize) -> Result<WaveletPyramid> {
    let max = max_levels(x.shape());
    if levels == 0 || levels > max {
        return Err(Error::InvalidInput(format!(
            "cannot decompose a {}x{} image to {levels} levels (maximum {max})",
            x.height(),
            x.width()
        )));
    }
    let family = WaveletFamily::Daubechies6;
    let lo = family.scaling_filter();
    let hi = family.wavelet_filter();
    let (mut h, mut w) = (
        padded_len(x.height(), levels),
        padded_len(x.width(), levels),
    );
    let mut current: Vec<f64> = (0..h * w)
        .map(|i| x.get(reflect(i / w, x.height()), reflect(i % w, x.width())))
        .collect();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let [ll, lh, hl, hh] = dwt2_level(&current, h, w, lo, &hi);
        let (h2, w2) = (h / 2, w / 2);
        details.push(DetailBands {
            horizontal: Image::new(h2, w2, lh)?,
            vertical: Image::new(h2, w2, hl)?,
            diagonal: Image::new(h2, w2, hh)?,
        });
        current = ll;
        (h, w) = (h2, w2);
    }
    Ok(WaveletPyramid {
        family,
        approximation: Image::new(h, w, current)?,
        details,
        original_shape: x.shape(),
    })
}

/// Inverse of [`dwt2`], cropped to the original shape.
pub fn idwt2(p: &WaveletPyramid) -> Result<Image> {
    let levels = p.levels();
    if levels == 0 {
        return Err(Error::InvalidInput("pyramid has no levels".into()));
    }
    let (oh, ow) = p.original_shape;
    let full = (padded_len(oh, levels), padded_len(ow, levels));
    let expected = |level: usize| (full.0 >> level, full.1 >> level);
    let check = |want: (usize, usize), band: &Image| {
        if band.shape() == want {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}", want.0, want.1),
                format!("{}x{}", band.height(), band.width()),
            ))
        }
    };
    check(expected(levels), &p.approximation)?;
    let lo = p.family.scaling_filter();
    let hi = p.family.wavelet_filter();
    let mut current = p.approximation.data().to_vec();
    for (i, d) in p.details.iter().enumerate().rev() {
        let band_shape = expected(i + 1);
        for band in [&d.horizontal, &d.vertical, &d.diagonal] {
            check(band_shape, band)?;
        }
        let (h, w) = expected(i);
        current = idwt2_level(
            [
                &current,
                d.horizontal.data(),
                d.vertical.data(),
                d.diagonal.data(),
            ],
            h,
            w,
            lo,
            &hi,
        );
    }
    let w = full.1;
    Image::new(
        oh,
        ow,
        (0..oh * ow)
            .map(|i| current[(i / ow) * w + i % ow])
            .collect(),
    )
}

/// Iteratively estimated low-frequency background of `y`.
///
/// Each pass clips values above the current mean down to the mean, keeps
/// only the coarsest approximation band (floored at zero) and takes the
/// pointwise minimum with `√y/2`. Images too small for seven levels use the
/// deepest feasible decomposition.
pub fn estimate_background(y: &Image, iterations: usize) -> Result<Image> {
    if iterations == 0 {
        return Err(Error::InvalidInput(
            "background iterations must be at least 1".into(),
        ));
    }
    let feasible = max_levels(y.shape());
    if feasible == 0 {
        return Err(Error::InvalidInput(format!(
            "image {}x{} is too small for a wavelet decomposition",
            y.height(),
            y.width()
        )));
    }
    let levels = if feasible < BACKGROUND_LEVELS {
        warn!(
            "image {}x{} supports only {feasible} wavelet levels, using {feasible} instead of {BACKGROUND_LEVELS}",
            y.height(),
            y.width()
        );
        feasible
    } else {
        BACKGROUND_LEVELS
    };
    let bound = y.map(|v| v.max(0.0).sqrt() / 2.0);
    let mut current = y.clone();
    for _ in 0..iterations {
        let mean = current.mean();
        let clipped = current.map(|v| v.min(mean));
        let low = idwt2(&dwt2(&clipped, levels)?.approximation_only())?;
        current = low.zip_map(&bound, |l, b| l.max(0.0).min(b))?;
    }
    Ok(current)
}

/// `y` minus its estimated background, clamped to `[0, 1]`.
pub fn remove_background(y: &Image) -> Result<Image> {
    let bg = estimate_background(y, BACKGROUND_ITERATIONS)?;
    y.zip_map(&bg, |v, b| (v - b).clamp(0.0, 1.0))
}
