use super::Image;
use crate::error::Result;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Gaussian SSIM window side length and standard deviation.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Stability constants for a dynamic range of 1.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio for peak value 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over every 11x11 Gaussian window that fits inside the image.
/// Images narrower or shorter than the window use one global window with
/// uniform weights.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let stats = Stats::compute(a.data(), b.data(), a.height(), a.width());
    Ok(stats.score())
}

/// SSIM value with its gradient with respect to both inputs.
#[derive(Debug, Clone)]
pub struct SsimGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Computes SSIM and its analytic gradient over raw row-major planes.
pub fn ssim_with_grad(a: &[f64], b: &[f64], height: usize, width: usize) -> SsimGrad {
    assert_eq!(a.len(), height * width);
    assert_eq!(b.len(), height * width);
    let stats = Stats::compute(a, b, height, width);
    let value = stats.score();
    let (grad_a, grad_b) = stats.gradients(a, b);
    SsimGrad {
        value,
        grad_a,
        grad_b,
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Weighted local averaging: either a separable Gaussian over valid windows
/// or a single uniform window over the whole image.
enum Window {
    Gaussian {
        taps: [f64; SSIM_WINDOW],
        height: usize,
        width: usize,
    },
    Global {
        len: usize,
    },
}

impl Window {
    fn new(height: usize, width: usize) -> Self {
        if height < SSIM_WINDOW || width < SSIM_WINDOW {
            Window::Global {
                len: height * width,
            }
        } else {
            Window::Gaussian {
                taps: gaussian_taps(),
                height,
                width,
            }
        }
    }

    fn windows(&self) -> usize {
        match self {
            Window::Gaussian { height, width, .. } => {
                (height - SSIM_WINDOW + 1) * (width - SSIM_WINDOW + 1)
            }
            Window::Global { .. } => 1,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Window::Global { len } => vec![x.iter().sum::<f64>() / *len as f64],
            Window::Gaussian {
                taps,
                height,
                width,
            } => {
                let ow = width - SSIM_WINDOW + 1;
                let oh = height - SSIM_WINDOW + 1;
                let mut rows = vec![0.0; height * ow];
                for r in 0..*height {
                    let src = &x[r * width..(r + 1) * width];
                    let dst = &mut rows[r * ow..(r + 1) * ow];
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d = taps
                            .iter()
                            .zip(&src[c..c + SSIM_WINDOW])
                            .map(|(t, v)| t * v)
                            .sum();
                    }
                }
                let mut out = vec![0.0; oh * ow];
                for (k, t) in taps.iter().enumerate() {
                    for r in 0..oh {
                        let src = &rows[(r + k) * ow..(r + k + 1) * ow];
                        let dst = &mut out[r * ow..(r + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += t * s;
                        }
                    }
                }
                out
            }
        }
    }

    /// Transpose of [`Window::apply`].
    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Window::Global { len } => vec![g[0] / *len as f64; *len],
            Window::Gaussian {
                taps,
                height,
                width,
            } => {
                let ow = width - SSIM_WINDOW + 1;
                let oh = height - SSIM_WINDOW + 1;
                let mut rows = vec![0.0; height * ow];
                for (k, t) in taps.iter().enumerate() {
                    for r in 0..oh {
                        let src = &g[r * ow..(r + 1) * ow];
                        let dst = &mut rows[(r + k) * ow..(r + k + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += t * s;
                        }
                    }
                }
                let mut out = vec![0.0; height * width];
                for r in 0..*height {
                    let src = &rows[r * ow..(r + 1) * ow];
                    let dst = &mut out[r * width..(r + 1) * width];
                    for (k, t) in taps.iter().enumerate() {
                        for (d, s) in dst[k..k + ow].iter_mut().zip(src) {
                            *d += t * s;
                        }
                    }
                }
                out
            }
        }
    }
}

/// Local first and raw second moments for every window.
struct Stats {
    window: Window,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    s_aa: Vec<f64>,
    s_bb: Vec<f64>,
    s_ab: Vec<f64>,
}

impl Stats {
    fn compute(a: &[f64], b: &[f64], height: usize, width: usize) -> Self {
        let window = Window::new(height, width);
        let sq =
            |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        Stats {
            mu_a: window.apply(a),
            mu_b: window.apply(b),
            s_aa: window.apply(&sq(a, a)),
            s_bb: window.apply(&sq(b, b)),
            s_ab: window.apply(&sq(a, b)),
            window,
        }
    }

    fn terms(&self, i: usize) -> Terms {
        let (ma, mb) = (self.mu_a[i], self.mu_b[i]);
        let var_a = self.s_aa[i] - ma * ma;
        let var_b = self.s_bb[i] - mb * mb;
        let cov = self.s_ab[i] - ma * mb;
        let num1 = 2.0 * ma * mb + SSIM_C1;
        let num2 = 2.0 * cov + SSIM_C2;
        let den1 = ma * ma + mb * mb + SSIM_C1;
        let den2 = var_a + var_b + SSIM_C2;
        Terms {
            ma,
            mb,
            num1,
            num2,
            den1,
            den2,
            s: num1 * num2 / (den1 * den2),
        }
    }

    fn score(&self) -> f64 {
        let n = self.window.windows();
        (0..n).map(|i| self.terms(i).s).sum::<f64>() / n as f64
    }

    fn gradients(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.window.windows();
        let inv = 1.0 / n as f64;
        // Partial derivatives of the mean score w.r.t. each window statistic.
        let mut d_mu_a = vec![0.0; n];
        let mut d_mu_b = vec![0.0; n];
        let mut d_s_aa = vec![0.0; n];
        let mut d_s_bb = vec![0.0; n];
        let mut d_s_ab = vec![0.0; n];
        for i in 0..n {
            let t = self.terms(i);
            let dd = t.den1 * t.den2;
            let d_sq = -t.s / t.den2 * inv;
            d_s_aa[i] = d_sq;
            d_s_bb[i] = d_sq;
            d_s_ab[i] = 2.0 * t.num1 / dd * inv;
            let common = 2.0 * (t.num2 - t.num1) / dd;
            let mean_term = 2.0 * t.s * (1.0 / t.den2 - 1.0 / t.den1);
            d_mu_a[i] = (t.mb * common + t.ma * mean_term) * inv;
            d_mu_b[i] = (t.ma * common + t.mb * mean_term) * inv;
        }
        let w = &self.window;
        let (g_mu_a, g_mu_b) = (w.adjoint(&d_mu_a), w.adjoint(&d_mu_b));
        let (g_aa, g_bb, g_ab) = (w.adjoint(&d_s_aa), w.adjoint(&d_s_bb), w.adjoint(&d_s_ab));
        let grad_a = (0..a.len())
            .map(|k| g_mu_a[k] + 2.0 * a[k] * g_aa[k] + b[k] * g_ab[k])
            .collect();
        let grad_b = (0..b.len())
            .map(|k| g_mu_b[k] + 2.0 * b[k] * g_bb[k] + a[k] * g_ab[k])
            .collect();
        (grad_a, grad_b)
    }
}

struct Terms {
    ma: f64,
    mb: f64,
    num1: f64,
    num2: f64,
    den1: f64,
    den2: f64,
    s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    #[test]
    fn psnr_cap_and_constant_offset() {
        let a = random(6, 5, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let a = random(9, 7, 2);
        let b = random(9, 7, 3);
        let mut mse = 0.0;
        for r in 0..9 {
            for c in 0..7 {
                let d = a.get(r, c) - b.get(r, c);
                mse += d * d;
            }
        }
        mse /= 63.0;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-10);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let reference = random(32, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..32 * 32).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05] {
            let noisy = Image::new(
                32,
                32,
                reference
                    .data()
                    .iter()
                    .zip(&noise)
                    .map(|(v, n)| v + amp * n)
                    .collect(),
            )
            .unwrap();
            let p = psnr(&reference, &noisy).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        for (h, w) in [(16, 16), (5, 7), (11, 30)] {
            let a = random(h, w, 7);
            let b = random(h, w, 8);
            assert_eq!(ssim(&a, &a).unwrap(), 1.0);
            assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        }
    }

    #[test]
    fn ssim_shape_mismatch() {
        assert!(ssim(&Image::zeros(3, 3), &Image::zeros(3, 4)).is_err());
        assert!(psnr(&Image::zeros(3, 3), &Image::zeros(4, 3)).is_err());
    }

    #[test]
    fn window_adjoint_identity() {
        let (h, w) = (14, 17);
        let win = Window::new(h, w);
        let x = random(h, w, 9);
        let g = random(h - 10, w - 10, 10);
        let lhs: f64 = win
            .apply(x.data())
            .iter()
            .zip(g.data())
            .map(|(p, q)| p * q)
            .sum();
        let rhs: f64 = win
            .adjoint(g.data())
            .iter()
            .zip(x.data())
            .map(|(p, q)| p * q)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (h, w) in [(12, 13), (6, 6)] {
            let a = random(h, w, 21);
            let b = random(h, w, 22);
            let g = ssim_with_grad(a.data(), b.data(), h, w);
            let step = 1e-5;
            for k in (0..h * w).step_by(7) {
                let mut plus = a.data().to_vec();
                let mut minus = a.data().to_vec();
                plus[k] += step;
                minus[k] -= step;
                let fd = (ssim_with_grad(&plus, b.data(), h, w).value
                    - ssim_with_grad(&minus, b.data(), h, w).value)
                    / (2.0 * step);
                let denom = fd.abs().max(g.grad_a[k].abs()).max(1e-8);
                assert!((fd - g.grad_a[k]).abs() / denom < 1e-5, "{h}x{w} coord {k}");
            }
        }
    }
}
