use std::sync::Arc;

use super::params::{DeladParams, STAGES};
use crate::autodiff::{Axis, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::fft_conv::{BlurOperator, Psf};
use crate::image::Image;

/// Graph handles for one parameter set, in [`DeladParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub x0: NodeId,
    pub corrections: [NodeId; STAGES],
    pub stages: [(NodeId, NodeId); STAGES],
    pub fusion: (NodeId, NodeId),
}

impl ParamNodes {
    /// Adds every parameter as a leaf.
    pub fn insert(graph: &mut Graph, params: &DeladParams, requires_grad: bool) -> Result<Self> {
        let mut leaf = |t: &Tensor| graph.leaf(t.clone(), requires_grad);
        let x0 = leaf(&params.x0)?;
        let corrections = [
            leaf(&params.corrections[0])?,
            leaf(&params.corrections[1])?,
            leaf(&params.corrections[2])?,
        ];
        let mut stages = [(x0, x0); STAGES];
        for (slot, layer) in stages.iter_mut().zip(&params.stages) {
            *slot = (leaf(&layer.weight)?, leaf(&layer.bias)?);
        }
        let fusion = (leaf(&params.fusion.weight)?, leaf(&params.fusion.bias)?);
        Ok(Self {
            x0,
            corrections,
            stages,
            fusion,
        })
    }

    /// Inverse of [`ParamNodes::ids`].
    pub fn from_ids(ids: &[NodeId]) -> Result<Self> {
        if ids.len() != 1 + 3 * STAGES + 2 {
            return Err(Error::InvalidInput(format!(
                "expected 12 parameter nodes, got {}",
                ids.len()
            )));
        }
        Ok(Self {
            x0: ids[0],
            corrections: [ids[1], ids[2], ids[3]],
            stages: [(ids[4], ids[5]), (ids[6], ids[7]), (ids[8], ids[9])],
            fusion: (ids[10], ids[11]),
        })
    }

    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.x0];
        out.extend(self.corrections);
        for (w, b) in self.stages.iter().chain(std::iter::once(&self.fusion)) {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub estimate: NodeId,
    pub stages: [NodeId; STAGES],
}

/// Builds the unrolled network on `graph`. For each stage
/// `W = x + γ Hᵀ(y − Hx) + m` and `x ← sigmoid(C(relu(W)))`; the stage
/// outputs are concatenated and fused into the estimate by a final
/// convolution and sigmoid.
pub fn build_forward(
    graph: &mut Graph,
    params: &ParamNodes,
    observed: NodeId,
    blur: &Arc<BlurOperator>,
    step_size: f64,
) -> Result<ForwardNodes> {
    let mut x = params.x0;
    let mut outputs = [x; STAGES];
    for k in 0..STAGES {
        let hx = graph.blur(x, blur.clone())?;
        let residual = graph.sub(observed, hx)?;
        let back = graph.blur_adjoint(residual, blur.clone())?;
        let step = graph.scale(back, step_size)?;
        let updated = graph.add(x, step)?;
        let w = graph.add(updated, params.corrections[k])?;
        let projected = graph.relu(w)?;
        let (weight, bias) = params.stages[k];
        let conv = graph.conv3x3(projected, weight, bias)?;
        x = graph.sigmoid(conv)?;
        outputs[k] = x;
    }
    let stacked = graph.concat(&outputs)?;
    let fused = graph.conv3x3(stacked, params.fusion.0, params.fusion.1)?;
    let estimate = graph.sigmoid(fused)?;
    Ok(ForwardNodes {
        estimate,
        stages: outputs,
    })
}

/// Output of [`forward`]: the estimate and each stage's intermediate.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub estimate: Image,
    pub stages: [Image; STAGES],
}

/// Runs the network once without tracking gradients.
pub fn forward(
    params: &DeladParams,
    observed: &Image,
    psf: &Psf,
    step_size: f64,
) -> Result<ForwardOutput> {
    if params.shape() != observed.shape() {
        return Err(Error::shape(
            format!("{}x{}", params.shape().0, params.shape().1),
            format!("{}x{}", observed.height(), observed.width()),
        ));
    }
    let blur = Arc::new(BlurOperator::new(psf, observed.shape())?);
    let mut graph = Graph::new();
    let nodes = ParamNodes::insert(&mut graph, params, false)?;
    let y = graph.leaf(Tensor::from_image(observed), false)?;
    let out = build_forward(&mut graph, &nodes, y, &blur, step_size)
        .map_err(|e| stage_error(e, "forward"))?;
    let img = |id| graph.value(id).to_image();
    Ok(ForwardOutput {
        estimate: img(out.estimate)?,
        stages: [
            img(out.stages[0])?,
            img(out.stages[1])?,
            img(out.stages[2])?,
        ],
    })
}

fn stage_error(e: Error, stage: &str) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{stage}: {what}")),
        other => other,
    }
}

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub hessian: f64,
    /// `None` leaves the sparsity term out of the graph entirely.
    pub sparsity: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    /// `-SSIM(H x̂, y)`.
    pub data: NodeId,
    pub hessian: NodeId,
    pub sparsity: Option<NodeId>,
}

/// `−SSIM(H x̂, y) + ψ₁·hessian(x̂) [+ ψ₂·sparsity(x̂)]`.
///
/// The Hessian node is always built so its value can be logged; it only
/// joins the total when its weight is nonzero.
pub fn build_loss(
    graph: &mut Graph,
    estimate: NodeId,
    observed: NodeId,
    blur: &Arc<BlurOperator>,
    weights: LossWeights,
) -> Result<LossNodes> {
    let reblurred = graph.blur(estimate, blur.clone())?;
    let similarity = graph.ssim(reblurred, observed)?;
    let data = graph.scale(similarity, -1.0)?;
    let hessian = build_hessian(graph, estimate)?;
    let mut total = data;
    if weights.hessian != 0.0 {
        let term = graph.scale(hessian, weights.hessian)?;
        total = graph.add(total, term)?;
    }
    let sparsity = match weights.sparsity {
        Some(weight) => {
            let s = build_sparsity(graph, estimate)?;
            let term = graph.scale(s, weight)?;
            total = graph.add(total, term)?;
            Some(s)
        }
        None => None,
    };
    Ok(LossNodes {
        total,
        data,
        hessian,
        sparsity,
    })
}

/// `mean|Xxx| + mean|Xyy| + 2·mean|Xxy|` with replicated edges.
pub fn build_hessian(graph: &mut Graph, x: NodeId) -> Result<NodeId> {
    let mean_abs = |graph: &mut Graph, n: NodeId| -> Result<NodeId> {
        let a = graph.abs(n)?;
        graph.mean(a)
    };
    let xx = graph.diff(x, Axis::Horizontal, 2)?;
    let yy = graph.diff(x, Axis::Vertical, 2)?;
    let dx = graph.diff(x, Axis::Horizontal, 1)?;
    let xy = graph.diff(dx, Axis::Vertical, 1)?;
    let txx = mean_abs(graph, xx)?;
    let tyy = mean_abs(graph, yy)?;
    let txy = mean_abs(graph, xy)?;
    let txy2 = graph.scale(txy, 2.0)?;
    let partial = graph.add(txx, tyy)?;
    graph.add(partial, txy2)
}

/// `mean|1 − x|`.
pub fn build_sparsity(graph: &mut Graph, x: NodeId) -> Result<NodeId> {
    let inverted = graph.one_minus(x)?;
    let a = graph.abs(inverted)?;
    graph.mean(a)
}

/// Hessian regularizer evaluated directly on an image: per-pixel mean of
/// `|Xxx| + |Xyy| + 2|Xxy|`. `Xxx`/`Xyy` use the `[1, −2, 1]` stencil,
/// `Xxy` forward differences along x then y; edges are replicated.
pub fn hessian_reg(x: &Image) -> f64 {
    let (h, w) = x.shape();
    let at = |r: usize, c: usize| x.get(r.min(h - 1), c.min(w - 1));
    let dx = |r: usize, c: usize| at(r, c + 1) - at(r, c);
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (rp, cp) = (r.saturating_sub(1), c.saturating_sub(1));
            let xx = at(r, cp) - 2.0 * at(r, c) + at(r, c + 1);
            let yy = at(rp, c) - 2.0 * at(r, c) + at(r + 1, c);
            let xy = dx((r + 1).min(h - 1), c) - dx(r, c);
            total += xx.abs() + yy.abs() + 2.0 * xy.abs();
        }
    }
    total / x.len() as f64
}

/// Mean of `|1 − x|` over all pixels.
pub fn sparsity_term(x: &Image) -> f64 {
    x.data().iter().map(|v| (1.0 - v).abs()).sum::<f64>() / x.len() as f64
}

/// Loss value of a fixed estimate, without gradients.
pub fn loss_value(
    estimate: &Image,
    observed: &Image,
    psf: &Psf,
    weights: LossWeights,
) -> Result<f64> {
    estimate.check_same_shape(observed)?;
    let blur = Arc::new(BlurOperator::new(psf, observed.shape())?);
    let mut graph = Graph::new();
    let e = graph.leaf(Tensor::from_image(estimate), false)?;
    let y = graph.leaf(Tensor::from_image(observed), false)?;
    let nodes = build_loss(&mut graph, e, y, &blur, weights)?;
    Ok(graph.value(nodes.total).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft_conv::convolve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn graph_hessian(x: &Image) -> f64 {
        let mut g = Graph::new();
        let n = g.leaf(Tensor::from_image(x), false).unwrap();
        let h = build_hessian(&mut g, n).unwrap();
        g.value(h).item()
    }

    #[test]
    fn hessian_of_constant_is_zero() {
        assert_eq!(hessian_reg(&Image::filled(6, 5, 0.3)), 0.0);
        assert_eq!(graph_hessian(&Image::filled(6, 5, 0.3)), 0.0);
    }

    #[test]
    fn hessian_of_interior_impulse() {
        let mut data = vec![0.0; 64];
        data[3 * 8 + 4] = 1.0;
        let img = Image::new(8, 8, data).unwrap();
        // Xxx: 1, -2, 1 along the row (4); Xyy likewise (4); Xxy: four unit
        // entries, doubled (8).
        let expected = (4.0 + 4.0 + 2.0 * 4.0) / 64.0;
        assert!((hessian_reg(&img) - expected).abs() < 1e-15);
        assert!((graph_hessian(&img) - expected).abs() < 1e-15);
    }

    #[test]
    fn hessian_paths_agree_and_are_homogeneous() {
        let x = random(9, 11, 3);
        let base = hessian_reg(&x);
        assert!((graph_hessian(&x) - base).abs() < 1e-12);
        for a in [-2.5, 0.5, 3.0] {
            assert!((hessian_reg(&x.map(|v| a * v)) - a.abs() * base).abs() < 1e-10);
        }
    }

    #[test]
    fn sparsity_values() {
        assert_eq!(sparsity_term(&Image::filled(4, 4, 1.0)), 0.0);
        assert_eq!(sparsity_term(&Image::zeros(4, 4)), 1.0);
        let x = random(7, 7, 4);
        let direct: f64 = x.data().iter().map(|v| 1.0 - v).sum::<f64>() / 49.0;
        assert!((sparsity_term(&x) - direct).abs() < 1e-12);
    }

    #[test]
    fn loss_of_exact_fit_is_minus_one() {
        let x = random(12, 12, 5);
        let psf = Psf::from_weights(3, 3, vec![1.0; 9]).unwrap();
        let y = convolve(&x, &psf).unwrap();
        let none = LossWeights {
            hessian: 0.0,
            sparsity: None,
        };
        assert_eq!(loss_value(&x, &y, &psf, none).unwrap(), -1.0);
    }

    #[test]
    fn loss_is_additive_in_hessian_weight() {
        let x = random(12, 12, 6);
        let y = random(12, 12, 7);
        let psf =
            Psf::from_weights(3, 3, vec![1.0, 2.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let at = |psi| {
            loss_value(
                &x,
                &y,
                &psf,
                LossWeights {
                    hessian: psi,
                    sparsity: None,
                },
            )
            .unwrap()
        };
        let psi = 0.37;
        assert!((at(psi) - at(0.0) - psi * hessian_reg(&x)).abs() < 1e-10);
    }

    #[test]
    fn forward_shapes_and_range() {
        let params = DeladParams::init((10, 13), 1).unwrap();
        let y = random(10, 13, 2);
        let out = forward(&params, &y, &Psf::delta(3), 0.8).unwrap();
        assert_eq!(out.estimate.shape(), (10, 13));
        assert!(out.estimate.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out, forward(&params, &y, &Psf::delta(3), 0.8).unwrap());
        assert!(forward(&params, &random(10, 12, 2), &Psf::delta(3), 0.8).is_err());
    }
}
