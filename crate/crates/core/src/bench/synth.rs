use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fft_conv::{convolve, Psf};
use crate::image::Image;

/// `H gt` plus seeded white Gaussian noise, clamped to `[0, 1]`.
pub fn synth_blur(gt: &Image, psf: &Psf, noise_sigma: f64, seed: u64) -> Result<Image> {
    let clean = blur_with_noise(gt, psf, noise_sigma, seed)?;
    Ok(clean.clamp(0.0, 1.0))
}

/// [`synth_blur`] without the final clamp.
pub fn blur_with_noise(gt: &Image, psf: &Psf, noise_sigma: f64, seed: u64) -> Result<Image> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let blurred = convolve(gt, psf)?;
    if noise_sigma == 0.0 {
        return Ok(blurred);
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = blurred.shape();
    let data = blurred
        .into_data()
        .into_iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Image::new(h, w, data)
}

/// Deterministic piecewise-smooth test scene in `[0, 1]`.
///
/// Overlapping soft-edged ellipses and rotated rectangles over a shading
/// gradient, with a faint oscillating texture. Gives sharp edges at many
/// orientations and scales, which is what makes deblurring hard.
pub fn procedural_scene(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let scale = hf.min(wf);
    let (g0, gr, gc) = (
        rng.random_range(0.3..0.6),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
    );
    let mut img: Vec<f64> = (0..height * width)
        .map(|i| g0 + gr * (i / width) as f64 / hf + gc * (i % width) as f64 / wf)
        .collect();

    for _ in 0..48 {
        let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let a = rng.random_range(0.02..0.25) * scale;
        let b = a * rng.random_range(0.3..1.0);
        let theta = rng.random_range(0.0..PI);
        let (s, c) = theta.sin_cos();
        let rect = rng.random_bool(0.5);
        let level = rng.random_range(0.0..1.0);
        let shade = rng.random_range(-0.15..0.15);
        let opacity = rng.random_range(0.6..1.0);
        let reach = a + 2.0;
        let r0 = (cy - reach).max(0.0) as usize;
        let r1 = ((cy + reach).ceil() as usize).min(height);
        let c0 = (cx - reach).max(0.0) as usize;
        let c1 = ((cx + reach).ceil() as usize).min(width);
        for r in r0..r1 {
            for col in c0..c1 {
                let (dy, dx) = (r as f64 - cy, col as f64 - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                // Signed distance in pixels, negative inside.
                let dist = if rect {
                    (u.abs() - a).max(v.abs() - b)
                } else {
                    ((u / a).powi(2) + (v / b).powi(2)).sqrt().mul_add(b, -b)
                };
                let cover = (0.5 - dist).clamp(0.0, 1.0) * opacity;
                if cover > 0.0 {
                    let value = level + shade * u / a;
                    let px = &mut img[r * width + col];
                    *px += cover * (value - *px);
                }
            }
        }
    }

    let waves: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            let f = rng.random_range(0.05..0.6);
            let ang = rng.random_range(0.0..PI);
            (
                f * ang.cos(),
                f * ang.sin(),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    for (i, px) in img.iter_mut().enumerate() {
        let (r, col) = ((i / width) as f64, (i % width) as f64);
        let t: f64 = waves
            .iter()
            .map(|&(fy, fx, ph)| (fy * r + fx * col + ph).sin())
            .sum();
        *px = (*px + 0.01 * t).clamp(0.0, 1.0);
    }
    Image::new(height, width, img).expect("scene values are finite")
}

/// Random camera-shake kernel of odd side `size`.
///
/// A smooth random walk with drifting heading is traced, scaled to fill
/// most of the support, then splatted bilinearly.
pub fn motion_kernel(size: usize, seed: u64) -> Result<Psf> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "kernel size must be odd and >= 3, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = 64 * size;
    let mut heading = rng.random_range(0.0..2.0 * PI);
    let mut turn = 0.0;
    let mut pts = Vec::with_capacity(steps);
    let (mut y, mut x) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        turn = 0.9 * turn + rng.random_range(-0.06..0.06);
        heading += turn;
        y += heading.sin();
        x += heading.cos();
        pts.push((y, x));
    }
    let (my, mx) = pts.iter().fold((0.0, 0.0), |acc, p| {
        (acc.0 + p.0 / steps as f64, acc.1 + p.1 / steps as f64)
    });
    let extent = pts
        .iter()
        .map(|p| (p.0 - my).abs().max((p.1 - mx).abs()))
        .fold(0.0, f64::max)
        .max(1e-9);
    let half = (size / 2) as f64;
    let fill = rng.random_range(0.55..0.9);
    let k = fill * (half - 1.0).max(0.5) / extent;
    let mut w = vec![0.0; size * size];
    for (py, px) in pts {
        let fy = half + (py - my) * k;
        let fx = half + (px - mx) * k;
        let (iy, ix) = (fy.floor(), fx.floor());
        let (ty, tx) = (fy - iy, fx - ix);
        for (dy, wy) in [(0usize, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0usize, 1.0 - tx), (1, tx)] {
                let r = iy as usize + dy;
                let c = ix as usize + dx;
                if r < size && c < size {
                    w[r * size + c] += wy * wx;
                }
            }
        }
    }
    Psf::from_weights(size, size, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_without_noise() {
        let gt = procedural_scene(32, 40, 1);
        let out = synth_blur(&gt, &Psf::delta(5), 0.0, 3).unwrap();
        assert!(out.max_abs_diff(&gt).unwrap() < 1e-12);
    }

    #[test]
    fn noise_moments() {
        let gt = procedural_scene(255, 255, 2);
        let psf = motion_kernel(15, 2).unwrap();
        let clean = convolve(&gt, &psf).unwrap();
        let noisy = blur_with_noise(&gt, &psf, 0.01, 9).unwrap();
        let n = clean.len() as f64;
        let diff: Vec<f64> = noisy
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let mean = diff.iter().sum::<f64>() / n;
        let std = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.01).abs() < 0.001, "std {std}");
    }

    #[test]
    fn deterministic() {
        let gt = procedural_scene(30, 30, 5);
        let psf = motion_kernel(9, 5).unwrap();
        assert_eq!(
            synth_blur(&gt, &psf, 0.02, 4).unwrap(),
            synth_blur(&gt, &psf, 0.02, 4).unwrap()
        );
        assert_ne!(
            synth_blur(&gt, &psf, 0.02, 4).unwrap(),
            synth_blur(&gt, &psf, 0.02, 5).unwrap()
        );
        assert_eq!(procedural_scene(30, 30, 5), gt);
        assert_eq!(motion_kernel(9, 5).unwrap(), psf);
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(synth_blur(&Image::zeros(4, 4), &Psf::delta(3), -0.1, 0).is_err());
    }

    #[test]
    fn scene_has_range_and_edges() {
        let s = procedural_scene(128, 128, 7);
        assert!(s.min() >= 0.0 && s.max() <= 1.0);
        assert!(s.max() - s.min() > 0.5);
        let jumps = (0..128 * 127)
            .filter(|&i| (s.data()[i] - s.data()[i + 128]).abs() > 0.1)
            .count();
        assert!(jumps > 100);
    }

    #[test]
    fn kernel_support() {
        for seed in 0..5 {
            let k = motion_kernel(17, seed).unwrap();
            assert_eq!(k.shape(), (17, 17));
            assert!((k.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let nonzero = k.data().iter().filter(|&&v| v > 1e-3).count();
            assert!(nonzero > 10 && nonzero < 17 * 17 / 2, "nonzero {nonzero}");
        }
        assert!(motion_kernel(8, 0).is_err());
    }
}
