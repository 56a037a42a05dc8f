use std::sync::Arc;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::fft_conv::BlurOperator;
use crate::image::ssim_with_grad;

/// Index of a node inside its [`Graph`]. Inputs always have smaller ids than
/// the nodes that consume them, so id order is a topological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Direction of a finite difference. `Horizontal` runs along columns (the
/// image x axis), `Vertical` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Scale,
    Mul,
    Blur,
    BlurAdjoint,
    Conv3x3,
    Relu,
    Sigmoid,
    Concat,
    Mean,
    Abs,
    Diff,
    OneMinus,
    Ssim,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Mul(NodeId, NodeId),
    Blur(NodeId, Arc<BlurOperator>),
    BlurAdjoint(NodeId, Arc<BlurOperator>),
    Conv3x3 {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    Mean(NodeId),
    Abs(NodeId),
    Diff {
        input: NodeId,
        axis: Axis,
        order: u8,
    },
    OneMinus(NodeId),
    Ssim(NodeId, NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Mul(..) => OpKind::Mul,
            Op::Blur(..) => OpKind::Blur,
            Op::BlurAdjoint(..) => OpKind::BlurAdjoint,
            Op::Conv3x3 { .. } => OpKind::Conv3x3,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Concat(_) => OpKind::Concat,
            Op::Mean(_) => OpKind::Mean,
            Op::Abs(_) => OpKind::Abs,
            Op::Diff { .. } => OpKind::Diff,
            Op::OneMinus(_) => OpKind::OneMinus,
            Op::Ssim(..) => OpKind::Ssim,
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Ssim(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Blur(a, _)
            | Op::BlurAdjoint(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Mean(a)
            | Op::Abs(a)
            | Op::OneMinus(a)
            | Op::Diff { input: a, .. } => vec![*a],
            Op::Conv3x3 {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Concat(ids) => ids.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run computation graph. Values are computed as nodes are added;
/// [`Graph::backward`] accumulates gradients into `requires_grad` leaves.
///
/// Calling `backward` twice without [`Graph::reset_grad`] adds the gradients
/// twice.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "leaf node {} element {i}",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            grad: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` for leaves that do not require
    /// gradients or before any backward pass.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn reset_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    /// Replaces a leaf's value. Call [`Graph::eval`] to refresh dependents.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Graph(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(node.value.shape(), value.shape()));
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every node up to `root` from the current leaf values.
    pub fn eval(&mut self, root: NodeId) -> Result<&Tensor> {
        for i in 0..=root.0 {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.forward(&self.nodes[i].op, i)?;
            self.nodes[i].value = value;
        }
        Ok(&self.nodes[root.0].value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    /// Circular convolution of every channel with a fixed kernel.
    pub fn blur(&mut self, a: NodeId, op: Arc<BlurOperator>) -> Result<NodeId> {
        self.push(Op::Blur(a, op))
    }

    /// Circular correlation (the adjoint of [`Graph::blur`]).
    pub fn blur_adjoint(&mut self, a: NodeId, op: Arc<BlurOperator>) -> Result<NodeId> {
        self.push(Op::BlurAdjoint(a, op))
    }

    /// Zero-padded 3x3 cross-correlation of a `(C, H, W)` input with a
    /// `(C, 3, 3)` weight plus a scalar bias, giving one output channel.
    pub fn conv3x3(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::Conv3x3 {
            input,
            weight,
            bias,
        })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Mean over all elements, giving a scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs(a))
    }

    /// Forward difference (`order` 1) or `[1, -2, 1]` stencil (`order` 2)
    /// along `axis`, replicating edge pixels.
    pub fn diff(&mut self, a: NodeId, axis: Axis, order: u8) -> Result<NodeId> {
        if !(1..=2).contains(&order) {
            return Err(Error::Graph(format!(
                "unsupported difference order {order}"
            )));
        }
        self.push(Op::Diff {
            input: a,
            axis,
            order,
        })
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::OneMinus(a))
    }

    /// Mean SSIM between two single-channel nodes, as a scalar.
    pub fn ssim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Ssim(a, b))
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let id = self.nodes.len();
        let inputs = op.inputs();
        if let Some(bad) = inputs.iter().find(|n| n.0 >= id) {
            return Err(Error::Graph(format!(
                "node {id} references unknown node {}",
                bad.0
            )));
        }
        let value = self.forward(&op, id)?;
        let requires_grad = inputs.iter().any(|n| self.nodes[n.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Ok(NodeId(id))
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(sa, sb));
        }
        Ok(sa)
    }

    fn forward(&self, op: &Op, id: usize) -> Result<Tensor> {
        let out = match op {
            Op::Leaf => unreachable!("leaves are not recomputed"),
            Op::Add(a, b) => self.zip(*a, *b, |x, y| x + y)?,
            Op::Sub(a, b) => self.zip(*a, *b, |x, y| x - y)?,
            Op::Mul(a, b) => self.zip(*a, *b, |x, y| x * y)?,
            Op::Scale(a, c) => map(self.val(*a), |x| x * c),
            Op::Relu(a) => map(self.val(*a), |x| x.max(0.0)),
            Op::Sigmoid(a) => map(self.val(*a), sigmoid),
            Op::Abs(a) => map(self.val(*a), f64::abs),
            Op::OneMinus(a) => map(self.val(*a), |x| 1.0 - x),
            Op::Blur(a, blur) => per_plane(self.val(*a), blur, |p| blur.apply_raw(p))?,
            Op::BlurAdjoint(a, blur) => per_plane(self.val(*a), blur, |p| blur.adjoint_raw(p))?,
            Op::Conv3x3 {
                input,
                weight,
                bias,
            } => {
                let (x, w, b) = (self.val(*input), self.val(*weight), self.val(*bias));
                check_conv_shapes(x.shape(), w.shape(), b.shape())?;
                conv3x3_forward(x, w, b.item())
            }
            Op::Concat(parts) => {
                let first = parts
                    .first()
                    .ok_or_else(|| Error::Graph("concat of zero inputs".into()))?;
                let s0 = self.shape(*first);
                let mut channels = 0;
                let mut data = Vec::new();
                for p in parts {
                    let s = self.shape(*p);
                    if (s.height, s.width) != (s0.height, s0.width) {
                        return Err(Error::shape(s0, s));
                    }
                    channels += s.channels;
                    data.extend_from_slice(self.val(*p).data());
                }
                Tensor::from_parts(Shape::new(channels, s0.height, s0.width), data)
            }
            Op::Mean(a) => {
                let x = self.val(*a);
                Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
            }
            Op::Diff { input, axis, order } => diff_forward(self.val(*input), *axis, *order),
            Op::Ssim(a, b) => {
                let s = self.same_shape(*a, *b)?;
                if s.channels != 1 {
                    return Err(Error::shape("1 channel", s));
                }
                let v = ssim_with_grad(self.val(*a).data(), self.val(*b).data(), s.height, s.width);
                Tensor::scalar(v.value)
            }
        };
        if let Some(i) = out.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "node {id} ({:?}) element {i}",
                op.kind()
            )));
        }
        Ok(out)
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let shape = self.same_shape(a, b)?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(shape, data))
    }

    /// Reverse pass from a scalar `root`, adding into leaf gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("unknown root node {}", root.0)));
        }
        if self.shape(root) != Shape::SCALAR {
            return Err(Error::Graph(format!(
                "backward needs a scalar root, got {}",
                self.shape(root)
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pending[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(Tensor::from_parts(node.value.shape(), g)),
                }
                continue;
            }
            for (input, contribution) in self.vjp(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match pending[input.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                    None => pending[input.0] = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for output gradient `g`.
    fn vjp(&self, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        let scaled = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            a.data().iter().zip(g).map(|(&x, &gi)| f(x, gi)).collect()
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::Mul(a, b) => vec![
                (*a, scaled(self.val(*b), &|y, gi| y * gi)),
                (*b, scaled(self.val(*a), &|x, gi| x * gi)),
            ],
            Op::Blur(a, blur) => {
                vec![(*a, per_plane_raw(g, blur, |p| blur.adjoint_raw(p)))]
            }
            Op::BlurAdjoint(a, blur) => {
                vec![(*a, per_plane_raw(g, blur, |p| blur.apply_raw(p)))]
            }
            Op::Conv3x3 {
                input,
                weight,
                bias,
            } => {
                let (gx, gw, gb) = conv3x3_backward(self.val(*input), self.val(*weight), g);
                vec![(*input, gx), (*weight, gw), (*bias, vec![gb])]
            }
            // Subgradient 0 at the kink.
            Op::Relu(a) => vec![(
                *a,
                scaled(self.val(*a), &|x, gi| if x > 0.0 { gi } else { 0.0 }),
            )],
            Op::Sigmoid(a) => vec![(*a, scaled(&node.value, &|s, gi| gi * s * (1.0 - s)))],
            Op::Abs(a) => vec![(*a, scaled(self.val(*a), &|x, gi| gi * sign(x)))],
            Op::OneMinus(a) => vec![(*a, g.iter().map(|v| -v).collect())],
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = self.val(*p).len();
                        let slice = g[offset..offset + n].to_vec();
                        offset += n;
                        (*p, slice)
                    })
                    .collect()
            }
            Op::Mean(a) => {
                let n = self.val(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Diff { input, axis, order } => {
                vec![(*input, diff_backward(self.shape(*input), *axis, *order, g))]
            }
            Op::Ssim(a, b) => {
                let s = self.shape(*a);
                let r = ssim_with_grad(self.val(*a).data(), self.val(*b).data(), s.height, s.width);
                vec![
                    (*a, r.grad_a.iter().map(|v| v * g[0]).collect()),
                    (*b, r.grad_b.iter().map(|v| v * g[0]).collect()),
                ]
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape(), a.data().iter().map(|&x| f(x)).collect())
}

fn per_plane(x: &Tensor, blur: &BlurOperator, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Tensor> {
    let s = x.shape();
    if (s.height, s.width) != blur.shape() {
        return Err(Error::shape(
            format!("{}x{} planes", blur.shape().0, blur.shape().1),
            s,
        ));
    }
    Ok(Tensor::from_parts(s, per_plane_raw(x.data(), blur, f)))
}

fn per_plane_raw(x: &[f64], blur: &BlurOperator, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let plane = blur.shape().0 * blur.shape().1;
    x.chunks_exact(plane).flat_map(f).collect()
}

fn check_conv_shapes(x: Shape, w: Shape, b: Shape) -> Result<()> {
    if w != Shape::new(x.channels, 3, 3) {
        return Err(Error::shape(Shape::new(x.channels, 3, 3), w));
    }
    if b != Shape::SCALAR {
        return Err(Error::shape(Shape::SCALAR, b));
    }
    Ok(())
}

fn conv3x3_forward(x: &Tensor, w: &Tensor, bias: f64) -> Tensor {
    let s = x.shape();
    let (h, wd) = (s.height, s.width);
    let mut out = vec![bias; h * wd];
    for ch in 0..s.channels {
        let plane = &x.data()[ch * h * wd..(ch + 1) * h * wd];
        let k = &w.data()[ch * 9..(ch + 1) * 9];
        for ki in 0..3 {
            for kj in 0..3 {
                let wt = k[ki * 3 + kj];
                // Output rows/cols whose tap lands inside the input.
                let (r0, r1) = (1usize.saturating_sub(ki), (h + 1 - ki).min(h));
                let (c0, c1) = (1usize.saturating_sub(kj), (wd + 1 - kj).min(wd));
                for r in r0..r1 {
                    let src_row = r + ki - 1;
                    let src = &plane[src_row * wd..(src_row + 1) * wd];
                    let dst = &mut out[r * wd..(r + 1) * wd];
                    for c in c0..c1 {
                        dst[c] += wt * src[c + kj - 1];
                    }
                }
            }
        }
    }
    Tensor::from_parts(Shape::new(1, h, wd), out)
}

fn conv3x3_backward(x: &Tensor, w: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let s = x.shape();
    let (h, wd) = (s.height, s.width);
    let mut gx = vec![0.0; s.len()];
    let mut gw = vec![0.0; w.len()];
    let gb = g.iter().sum();
    for ch in 0..s.channels {
        let plane = &x.data()[ch * h * wd..(ch + 1) * h * wd];
        let gplane = &mut gx[ch * h * wd..(ch + 1) * h * wd];
        for ki in 0..3 {
            for kj in 0..3 {
                let wt = w.data()[ch * 9 + ki * 3 + kj];
                let (r0, r1) = (1usize.saturating_sub(ki), (h + 1 - ki).min(h));
                let (c0, c1) = (1usize.saturating_sub(kj), (wd + 1 - kj).min(wd));
                let mut acc = 0.0;
                for r in r0..r1 {
                    let src_row = r + ki - 1;
                    for c in c0..c1 {
                        let gi = g[r * wd + c];
                        acc += gi * plane[src_row * wd + c + kj - 1];
                        gplane[src_row * wd + c + kj - 1] += wt * gi;
                    }
                }
                gw[ch * 9 + ki * 3 + kj] = acc;
            }
        }
    }
    (gx, gw, gb)
}

/// Neighbor offsets along an axis with edge replication, as flat indices.
fn neighbors(s: Shape, axis: Axis, idx: usize) -> (usize, usize) {
    let (h, w) = (s.height, s.width);
    let within = idx % s.plane();
    let (r, c) = (within / w, within % w);
    match axis {
        Axis::Horizontal => {
            let prev = if c > 0 { idx - 1 } else { idx };
            let next = if c + 1 < w { idx + 1 } else { idx };
            (prev, next)
        }
        Axis::Vertical => {
            let prev = if r > 0 { idx - w } else { idx };
            let next = if r + 1 < h { idx + w } else { idx };
            (prev, next)
        }
    }
}

fn diff_forward(x: &Tensor, axis: Axis, order: u8) -> Tensor {
    let s = x.shape();
    let d = x.data();
    let out = (0..d.len())
        .map(|i| {
            let (prev, next) = neighbors(s, axis, i);
            match order {
                1 => d[next] - d[i],
                _ => d[prev] - 2.0 * d[i] + d[next],
            }
        })
        .collect();
    Tensor::from_parts(s, out)
}

fn diff_backward(s: Shape, axis: Axis, order: u8, g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; s.len()];
    for (i, &gi) in g.iter().enumerate() {
        let (prev, next) = neighbors(s, axis, i);
        match order {
            1 => {
                gx[next] += gi;
                gx[i] -= gi;
            }
            _ => {
                gx[prev] += gi;
                gx[i] -= 2.0 * gi;
                gx[next] += gi;
            }
        }
    }
    gx
}
