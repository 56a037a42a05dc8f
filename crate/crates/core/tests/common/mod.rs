//! Straight-line reference implementations shared by the integration tests.
#![allow(dead_code)]

use delad_core::background::{dwt2, idwt2};
use delad_core::fft_conv::Psf;
use delad_core::image::Image;
use delad_core::model::DeladParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.random::<f64>())
}

pub fn random_psf(h: usize, w: usize, seed: u64) -> Psf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Psf::from_weights(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Circular convolution by direct summation around the kernel center.
pub fn spatial_convolve(x: &Image, k: &Psf) -> Image {
    let (h, w) = x.shape();
    let (cr, cc) = k.center();
    Image::from_fn(h, w, |r, c| {
        let mut s = 0.0;
        for i in 0..k.height() {
            for j in 0..k.width() {
                s += k.get(i, j) * x.get((r + 4 * h + cr - i) % h, (c + 4 * w + cc - j) % w);
            }
        }
        s
    })
}

/// Transpose of [`spatial_convolve`], built by scattering each output's
/// weights back onto the inputs that produced it.
pub fn spatial_adjoint(y: &Image, k: &Psf) -> Image {
    let (h, w) = y.shape();
    let (cr, cc) = k.center();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            for i in 0..k.height() {
                for j in 0..k.width() {
                    let src = ((r + 4 * h + cr - i) % h) * w + (c + 4 * w + cc - j) % w;
                    out[src] += k.get(i, j) * y.get(r, c);
                }
            }
        }
    }
    Image::new(h, w, out).unwrap()
}

/// Zero-padded 3x3 cross-correlation summed over channels, plus bias.
pub fn conv3x3(planes: &[&Image], weight: &[f64], bias: f64) -> Image {
    let (h, w) = planes[0].shape();
    Image::from_fn(h, w, |r, c| {
        let mut s = bias;
        for (ch, p) in planes.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    let (rr, cc) = (r as isize + i as isize - 1, c as isize + j as isize - 1);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        s += weight[ch * 9 + i * 3 + j] * p.get(rr as usize, cc as usize);
                    }
                }
            }
        }
        s
    })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// The unrolled network written out with plain loops.
pub fn delad_forward(p: &DeladParams, y: &Image, k: &Psf, gamma: f64) -> (Image, Vec<Image>) {
    let (h, w) = y.shape();
    let grid = |t: &delad_core::autodiff::Tensor| Image::new(h, w, t.data().to_vec()).unwrap();
    let mut x = grid(&p.x0);
    let mut stages = Vec::new();
    for s in 0..3 {
        let hx = spatial_convolve(&x, k);
        let resid = Image::from_fn(h, w, |r, c| y.get(r, c) - hx.get(r, c));
        let back = spatial_adjoint(&resid, k);
        let m = grid(&p.corrections[s]);
        let wk = Image::from_fn(h, w, |r, c| {
            (x.get(r, c) + gamma * back.get(r, c) + m.get(r, c)).max(0.0)
        });
        let layer = &p.stages[s];
        x = conv3x3(&[&wk], layer.weight.data(), layer.bias.item()).map(sigmoid);
        stages.push(x.clone());
    }
    let refs: Vec<&Image> = stages.iter().collect();
    let fused = conv3x3(&refs, p.fusion.weight.data(), p.fusion.bias.item()).map(sigmoid);
    (fused, stages)
}

fn gaussian_window() -> Vec<f64> {
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut win = Vec::with_capacity(121);
    for a in &g {
        for b in &g {
            win.push(a * b / (s * s));
        }
    }
    win
}

/// Mean SSIM over every fully contained 11x11 Gaussian window, evaluated
/// window by window with the 2D weights.
pub fn ssim_windowed(a: &Image, b: &Image) -> f64 {
    let (c1, c2) = (1e-4, 9e-4);
    let (h, w) = a.shape();
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = win[i * 11 + j];
                    let (va, vb) = (a.get(r + i, c + j), b.get(r + i, c + j));
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

/// Solves the dense system `a x = b` by Gaussian elimination with partial
/// pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dense matrix of the circular blur, one column per unit impulse.
pub fn blur_matrix(h: usize, w: usize, k: &Psf) -> Vec<Vec<f64>> {
    let n = h * w;
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = spatial_convolve(&Image::new(h, w, e).unwrap(), k);
        for i in 0..n {
            m[i][j] = col.data()[i];
        }
    }
    m
}

/// Least-squares solution of `H x = y` from the normal equations.
pub fn normal_equations(y: &Image, k: &Psf) -> Image {
    let (h, w) = y.shape();
    let m = blur_matrix(h, w, k);
    let n = h * w;
    let ata: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|r| m[r][i] * m[r][j]).sum())
                .collect()
        })
        .collect();
    let aty: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|r| m[r][i] * y.data()[r]).sum())
        .collect();
    Image::new(h, w, solve_dense(ata, aty)).unwrap()
}

pub fn well_conditioned_psf() -> Psf {
    Psf::from_weights(3, 3, vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]).unwrap()
}

pub struct Scene {
    pub y: Image,
    pub smooth: Image,
    pub impulses: Vec<(usize, usize)>,
    pub height: f64,
}

/// Smooth field lying in the level-7 approximation space plus sparse peaks.
pub fn smooth_plus_impulses(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 256;
    let mut p = dwt2(&Image::zeros(n, n), 7).unwrap();
    p.approximation = Image::from_fn(2, 2, |_, _| rng.random::<f64>());
    let raw = idwt2(&p).unwrap();
    let (lo, hi) = (raw.min(), raw.max());
    let smooth = raw.map(|v| 0.12 + 0.06 * (v - lo) / (hi - lo));
    let mut impulses: Vec<(usize, usize)> = Vec::new();
    while impulses.len() < 20 {
        let rc = (rng.random_range(4..n - 4), rng.random_range(4..n - 4));
        if impulses
            .iter()
            .all(|q| q.0.abs_diff(rc.0) + q.1.abs_diff(rc.1) > 8)
        {
            impulses.push(rc);
        }
    }
    let height = 0.6;
    let y = Image::from_fn(n, n, |r, c| {
        smooth.get(r, c)
            + if impulses.contains(&(r, c)) {
                height
            } else {
                0.0
            }
    });
    Scene {
        y,
        smooth,
        impulses,
        height,
    }
}
