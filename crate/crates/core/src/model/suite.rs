use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{build_forward, build_loss, LossWeights, ParamNodes};
use super::params::DeladParams;
use crate::autodiff::{grad_check, Axis, GradCheckConfig, Graph, NodeId, Shape, Tensor};
use crate::error::Result;
use crate::fft_conv::{BlurOperator, Psf};

/// Relative tolerance for primitives that are linear in their inputs.
pub const LINEAR_TOLERANCE: f64 = 1e-10;
/// Relative tolerance for everything else.
pub const NONLINEAR_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub linear: bool,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

fn random(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(
        shape,
        (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("non-empty")
}

/// Scalar reduction with fixed random weights, so every output coordinate
/// contributes to the checked gradient.
fn reduce(g: &mut Graph, x: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = g.leaf(weights.clone(), false)?;
    let p = g.mul(x, w)?;
    g.mean(p)
}

/// Runs the finite-difference check on every graph primitive and on the
/// complete training losses, all on `size x size` inputs.
pub fn gradient_suite(size: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = Shape::new(1, size, size);
    let multi = Shape::new(3, size, size);
    let a = random(multi, -1.0, 1.0, &mut rng);
    let b = random(multi, -1.0, 1.0, &mut rng);
    let a1 = random(plane, 0.0, 1.0, &mut rng);
    let b1 = random(plane, 0.0, 1.0, &mut rng);
    let conv_w = random(Shape::new(3, 3, 3), -0.5, 0.5, &mut rng);
    let w_multi = random(multi, -1.0, 1.0, &mut rng);
    let w_plane = random(plane, -1.0, 1.0, &mut rng);
    let w_concat = random(Shape::new(6, size, size), -1.0, 1.0, &mut rng);
    let psf = Psf::from_weights(5, 3, (0..15).map(|_| rng.random::<f64>()).collect())?;
    let blur = Arc::new(BlurOperator::new(&psf, (size, size))?);

    let unary = |f: fn(&mut Graph, NodeId) -> Result<NodeId>, w: Tensor| -> Builder {
        Box::new(move |g, l| {
            let n = f(g, l[0])?;
            reduce(g, n, &w)
        })
    };
    let binary = |f: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>, w: Tensor| -> Builder {
        Box::new(move |g, l| {
            let n = f(g, l[0], l[1])?;
            reduce(g, n, &w)
        })
    };
    let with_blur = |adjoint: bool| -> Builder {
        let (op, w) = (blur.clone(), w_plane.clone());
        Box::new(move |g, l| {
            let n = if adjoint {
                g.blur_adjoint(l[0], op.clone())?
            } else {
                g.blur(l[0], op.clone())?
            };
            reduce(g, n, &w)
        })
    };
    let diff = |axis: Axis, order: u8| -> Builder {
        let w = w_multi.clone();
        Box::new(move |g, l| {
            let n = g.diff(l[0], axis, order)?;
            reduce(g, n, &w)
        })
    };

    let mut cases: Vec<(&'static str, bool, Builder, Vec<Tensor>)> = vec![
        (
            "add",
            true,
            binary(Graph::add, w_multi.clone()),
            vec![a.clone(), b.clone()],
        ),
        (
            "sub",
            true,
            binary(Graph::sub, w_multi.clone()),
            vec![a.clone(), b.clone()],
        ),
        (
            "scale",
            true,
            {
                let w = w_multi.clone();
                Box::new(move |g, l| {
                    let n = g.scale(l[0], -1.7)?;
                    reduce(g, n, &w)
                })
            },
            vec![a.clone()],
        ),
        (
            "one_minus",
            true,
            unary(Graph::one_minus, w_multi.clone()),
            vec![a.clone()],
        ),
        (
            "concat",
            true,
            {
                let w = w_concat;
                Box::new(move |g, l| {
                    let n = g.concat(&[l[0], l[1]])?;
                    reduce(g, n, &w)
                })
            },
            vec![a.clone(), b.clone()],
        ),
        ("mean", true, Box::new(|g, l| g.mean(l[0])), vec![a.clone()]),
        ("diff_x1", true, diff(Axis::Horizontal, 1), vec![a.clone()]),
        ("diff_y1", true, diff(Axis::Vertical, 1), vec![a.clone()]),
        ("diff_x2", true, diff(Axis::Horizontal, 2), vec![a.clone()]),
        ("diff_y2", true, diff(Axis::Vertical, 2), vec![a.clone()]),
        ("blur", true, with_blur(false), vec![a1.clone()]),
        ("blur_adjoint", true, with_blur(true), vec![a1.clone()]),
        (
            "mul",
            false,
            binary(Graph::mul, w_multi.clone()),
            vec![a.clone(), b.clone()],
        ),
        (
            "relu",
            false,
            unary(Graph::relu, w_multi.clone()),
            vec![a.clone()],
        ),
        (
            "sigmoid",
            false,
            unary(Graph::sigmoid, w_multi.clone()),
            vec![a.clone()],
        ),
        (
            "abs",
            false,
            unary(Graph::abs, w_multi.clone()),
            vec![a.clone()],
        ),
        (
            "conv3x3",
            false,
            {
                let w = w_plane.clone();
                Box::new(move |g, l| {
                    let n = g.conv3x3(l[0], l[1], l[2])?;
                    let s = g.sigmoid(n)?;
                    reduce(g, s, &w)
                })
            },
            vec![a.clone(), conv_w, Tensor::scalar(0.1)],
        ),
        (
            "ssim",
            false,
            Box::new(|g, l| g.ssim(l[0], l[1])),
            vec![a1.clone(), b1.clone()],
        ),
    ];

    let y = Tensor::new(plane, b1.data().to_vec())?;
    let params = DeladParams::init((size, size), seed)?;
    let leaves: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    for (name, weights) in [
        (
            "loss_hessian",
            LossWeights {
                hessian: 0.05,
                sparsity: None,
            },
        ),
        (
            "loss_sparse",
            LossWeights {
                hessian: 0.05,
                sparsity: Some(0.2),
            },
        ),
    ] {
        let (op, yt) = (blur.clone(), y.clone());
        let build: Builder = Box::new(move |g, l| {
            let nodes = ParamNodes::from_ids(l)?;
            let yid = g.leaf(yt.clone(), false)?;
            let fwd = build_forward(g, &nodes, yid, &op, 0.8)?;
            Ok(build_loss(g, fwd.estimate, yid, &op, weights)?.total)
        });
        cases.push((name, false, build, leaves.clone()));
    }

    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, linear, build, leaves))| {
            let cfg = GradCheckConfig {
                step: if linear { 1.0 } else { 1e-5 },
                tolerance: if linear {
                    LINEAR_TOLERANCE
                } else {
                    NONLINEAR_TOLERANCE
                },
                samples: 32,
                seed: seed.wrapping_add(i as u64),
            };
            let report = grad_check(build, &leaves, &cfg)?;
            Ok(SuiteResult {
                name,
                linear,
                tolerance: cfg.tolerance,
                max_rel_error: report.max_rel_error(),
                checked: report.leaves.iter().map(|l| l.checked).sum(),
                excluded: report.leaves.iter().map(|l| l.excluded).sum(),
            })
        })
        .collect()
}
