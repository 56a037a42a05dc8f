//! Minimal reverse-mode differentiation over `(channels, height, width)`
//! tensors, covering the primitives the unrolled model needs.
//!
//! Graphs are built eagerly: each node's value is computed when it is
//! added. Gradients accumulate by summation over every path from the root.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, LeafReport};
pub use graph::{Axis, Graph, NodeId, OpKind};
pub use tensor::{Shape, Tensor};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fft_conv::{BlurOperator, Psf};
    use crate::image::{ssim, Image};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            shape,
            (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    /// Reduces a node to a scalar with fixed random weights so every output
    /// coordinate contributes a distinct amount.
    fn weighted_mean(g: &mut Graph, x: NodeId, seed: u64) -> crate::Result<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(g.shape(x), -1.0, 1.0, &mut rng);
        let w = g.leaf(w, false)?;
        let p = g.mul(x, w)?;
        g.mean(p)
    }

    fn linear_cfg() -> GradCheckConfig {
        GradCheckConfig {
            step: 1.0,
            tolerance: 1e-10,
            samples: 48,
            seed: 1,
        }
    }

    fn smooth_cfg() -> GradCheckConfig {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            samples: 48,
            seed: 2,
        }
    }

    fn blur_op(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Arc<BlurOperator> {
        let psf = Psf::from_weights(5, 3, (0..15).map(|_| rng.random::<f64>()).collect()).unwrap();
        Arc::new(BlurOperator::new(&psf, (h, w)).unwrap())
    }

    #[test]
    fn leaf_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0), true).unwrap();
        assert_eq!(g.value(x).item(), 0.0);
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).item(), 0.5);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn mean_of_square_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv = random(Shape::new(2, 3, 4), -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(xv.clone(), true).unwrap();
        let sq = g.mul(x, x).unwrap();
        let m = g.mean(sq).unwrap();
        g.backward(m).unwrap();
        let n = xv.len() as f64;
        for (gi, xi) in g.grad(x).unwrap().data().iter().zip(xv.data()) {
            assert!((gi - 2.0 * xi / n).abs() < 1e-15);
        }
    }

    #[test]
    fn double_backward_doubles_and_reset_clears() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5), true).unwrap();
        let c = g.leaf(Tensor::scalar(2.0), false).unwrap();
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 4.0);
        assert!(g.grad(c).is_none());
        g.reset_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(Shape::new(1, 2, 2)), true).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(Shape::new(1, 2, 2)), true).unwrap();
        let b = g.leaf(Tensor::zeros(Shape::new(1, 2, 3)), true).unwrap();
        assert!(matches!(
            g.add(a, b),
            Err(crate::Error::ShapeMismatch { .. })
        ));
        let big = g.leaf(Tensor::scalar(1e200), true).unwrap();
        let err = g.mul(big, big).unwrap_err();
        assert!(err.to_string().contains("node 3"), "{err}");
        assert!(g.leaf(Tensor::scalar(f64::NAN), true).is_err());
    }

    #[test]
    fn eval_recomputes_after_leaf_update() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0), true).unwrap();
        let y = g.scale(x, 3.0).unwrap();
        g.set_leaf(x, Tensor::scalar(2.0)).unwrap();
        assert_eq!(g.eval(y).unwrap().item(), 6.0);
        assert!(g.set_leaf(y, Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn inputs_are_not_mutated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xv = random(Shape::new(1, 6, 6), -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(xv.clone(), true).unwrap();
        let d = g.diff(x, Axis::Horizontal, 2).unwrap();
        let a = g.abs(d).unwrap();
        let m = g.mean(a).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.value(x), &xv);
    }

    #[test]
    fn linear_primitives_pass_tight_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = Shape::new(2, 7, 6);
        let a = random(shape, -1.0, 1.0, &mut rng);
        let b = random(shape, -1.0, 1.0, &mut rng);
        let blur = blur_op(7, 6, &mut rng);

        let builders: Vec<(
            &str,
            Box<dyn Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>>,
        )> = vec![
            (
                "add",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.add(l[0], l[1])?;
                    weighted_mean(g, n, 9)
                }),
            ),
            (
                "sub",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.sub(l[0], l[1])?;
                    weighted_mean(g, n, 9)
                }),
            ),
            (
                "scale",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.scale(l[0], -1.7)?;
                    weighted_mean(g, n, 9)
                }),
            ),
            (
                "one_minus",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.one_minus(l[0])?;
                    weighted_mean(g, n, 9)
                }),
            ),
            (
                "concat",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.concat(&[l[0], l[1]])?;
                    weighted_mean(g, n, 9)
                }),
            ),
            ("mean", Box::new(|g: &mut Graph, l: &[NodeId]| g.mean(l[0]))),
            (
                "diff1x",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.diff(l[0], Axis::Horizontal, 1)?;
                    weighted_mean(g, n, 9)
                }),
            ),
            (
                "diff2y",
                Box::new(|g: &mut Graph, l: &[NodeId]| {
                    let n = g.diff(l[0], Axis::Vertical, 2)?;
                    weighted_mean(g, n, 9)
                }),
            ),
            ("blur", {
                let blur = blur.clone();
                Box::new(move |g: &mut Graph, l: &[NodeId]| {
                    let n = g.blur(l[0], blur.clone())?;
                    weighted_mean(g, n, 9)
                })
            }),
            ("blur_adjoint", {
                let blur = blur.clone();
                Box::new(move |g: &mut Graph, l: &[NodeId]| {
                    let n = g.blur_adjoint(l[0], blur.clone())?;
                    weighted_mean(g, n, 9)
                })
            }),
        ];
        for (name, build) in builders {
            let report = grad_check(build, &[a.clone(), b.clone()], &linear_cfg()).unwrap();
            assert!(report.passed(), "{name}: {:?}", report);
        }
    }

    #[test]
    fn nonlinear_primitives_pass_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = Shape::new(3, 8, 8);
        let a = random(shape, -1.0, 1.0, &mut rng);
        let b = random(shape, -1.0, 1.0, &mut rng);
        let w = random(Shape::new(3, 3, 3), -0.5, 0.5, &mut rng);
        let bias = Tensor::scalar(0.1);

        let check = |name: &str,
                     build: &dyn Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>,
                     leaves: &[Tensor]| {
            let report = grad_check(build, leaves, &smooth_cfg()).unwrap();
            assert!(report.passed(), "{name}: {report:?}");
        };
        check(
            "mul",
            &|g, l| {
                let n = g.mul(l[0], l[1])?;
                weighted_mean(g, n, 9)
            },
            &[a.clone(), b.clone()],
        );
        check(
            "sigmoid",
            &|g, l| {
                let n = g.sigmoid(l[0])?;
                weighted_mean(g, n, 9)
            },
            std::slice::from_ref(&a),
        );
        check(
            "relu",
            &|g, l| {
                let n = g.relu(l[0])?;
                weighted_mean(g, n, 9)
            },
            std::slice::from_ref(&a),
        );
        check(
            "abs",
            &|g, l| {
                let n = g.abs(l[0])?;
                weighted_mean(g, n, 9)
            },
            std::slice::from_ref(&a),
        );
        check(
            "conv3x3",
            &|g, l| {
                let n = g.conv3x3(l[0], l[1], l[2])?;
                let s = g.sigmoid(n)?;
                weighted_mean(g, s, 9)
            },
            &[a.clone(), w, bias],
        );
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Tensor::new(Shape::new(1, 1, 3), vec![0.0, 0.5, -0.5]).unwrap();
        let report = grad_check(
            |g, l| {
                let r = g.relu(l[0])?;
                g.mean(r)
            },
            &[x],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.leaves[0].excluded, 1);
        assert_eq!(report.leaves[0].checked, 2);
        assert!(report.passed());
    }

    #[test]
    fn linear_graph_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(Shape::new(1, 8, 8), -1.0, 1.0, &mut rng);
        let x = random(Shape::new(1, 8, 8), -1.0, 1.0, &mut rng);
        let report = grad_check(
            |g, l| {
                let p = g.mul(l[0], l[1])?;
                g.mean(p)
            },
            &[w, x],
            &linear_cfg(),
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-10, "{report:?}");
    }

    #[test]
    fn ssim_primitive_matches_metric_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (h, w) in [(8, 8), (16, 14)] {
            let a = random(Shape::new(1, h, w), 0.0, 1.0, &mut rng);
            let b = random(Shape::new(1, h, w), 0.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let (na, nb) = (
                g.leaf(a.clone(), true).unwrap(),
                g.leaf(b.clone(), true).unwrap(),
            );
            let s = g.ssim(na, nb).unwrap();
            let metric = ssim(&a.to_image().unwrap(), &b.to_image().unwrap()).unwrap();
            assert!((g.value(s).item() - metric).abs() <= 1e-10);

            let report = grad_check(|g, l| g.ssim(l[0], l[1]), &[a, b], &smooth_cfg()).unwrap();
            assert!(report.passed(), "{h}x{w}: {report:?}");
        }
    }

    #[test]
    fn backward_is_linear_in_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xv = random(Shape::new(1, 6, 6), 0.1, 0.9, &mut rng);
        let grads = |alpha: f64, beta: f64| -> Vec<f64> {
            let mut g = Graph::new();
            let x = g.leaf(xv.clone(), true).unwrap();
            let s = g.sigmoid(x).unwrap();
            let f = g.mean(s).unwrap();
            let d = g.diff(x, Axis::Vertical, 2).unwrap();
            let a = g.abs(d).unwrap();
            let h = g.mean(a).unwrap();
            let fa = g.scale(f, alpha).unwrap();
            let hb = g.scale(h, beta).unwrap();
            let root = g.add(fa, hb).unwrap();
            g.backward(root).unwrap();
            g.grad(x).unwrap().data().to_vec()
        };
        let (f, h) = (grads(1.0, 0.0), grads(0.0, 1.0));
        let combo = grads(2.5, -0.75);
        for i in 0..f.len() {
            assert!((combo[i] - (2.5 * f[i] - 0.75 * h[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn detects_nondeterministic_builder() {
        let counter = std::cell::Cell::new(0.0);
        let x = Tensor::scalar(1.0);
        let res = grad_check(
            |g, l| {
                counter.set(counter.get() + 1.0);
                g.scale(l[0], counter.get())
            },
            &[x],
            &GradCheckConfig::default(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn image_round_trip() {
        let img = Image::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(Tensor::from_image(&img).to_image().unwrap(), img);
    }
}
