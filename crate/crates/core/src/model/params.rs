use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};

/// Number of unrolled Landweber stages.
pub const STAGES: usize = 3;

/// A 3x3 convolution with `in_channels` inputs and one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Shape `(in_channels, 3, 3)`.
    pub weight: Tensor,
    /// Scalar bias, shape `(1, 1, 1)`.
    pub bias: Tensor,
}

impl ConvLayer {
    /// Weights uniform in `±sqrt(1 / fan_in)`, bias zero.
    fn init(in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_channels * 9) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let data = (0..in_channels * 9)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::new(Shape::new(in_channels, 3, 3), data).expect("non-empty"),
            bias: Tensor::scalar(0.0),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Every learnable quantity of the unrolled network.
#[derive(Debug, Clone, PartialEq)]
pub struct DeladParams {
    /// Learned starting estimate.
    pub x0: Tensor,
    /// Per-stage additive corrections.
    pub corrections: [Tensor; STAGES],
    /// Per-stage 1 -> 1 channel refinement layers.
    pub stages: [ConvLayer; STAGES],
    /// 3 -> 1 channel layer merging the stage outputs.
    pub fusion: ConvLayer,
}

impl DeladParams {
    /// Draws parameters from a ChaCha8 generator seeded with `seed`. Grids
    /// are i.i.d. uniform on `[0, 1)` in the order `x0, m1, m2, m3`; the
    /// convolution layers follow in stage order, fusion last.
    pub fn init(shape: (usize, usize), seed: u64) -> Result<Self> {
        let (h, w) = shape;
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot build parameters for {h}x{w}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = |rng: &mut ChaCha8Rng| {
            let data = (0..h * w).map(|_| rng.random::<f64>()).collect();
            Tensor::new(Shape::new(1, h, w), data).expect("non-empty")
        };
        let x0 = grid(&mut rng);
        let corrections = [grid(&mut rng), grid(&mut rng), grid(&mut rng)];
        let stages = [
            ConvLayer::init(1, &mut rng),
            ConvLayer::init(1, &mut rng),
            ConvLayer::init(1, &mut rng),
        ];
        let fusion = ConvLayer::init(STAGES, &mut rng);
        Ok(Self {
            x0,
            corrections,
            stages,
            fusion,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.x0.shape();
        (s.height, s.width)
    }

    /// `4·H·W + 3·(9 + 1) + (27 + 1)`.
    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.x0];
        out.extend(self.corrections.iter());
        for layer in self.stages.iter().chain(std::iter::once(&self.fusion)) {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out
    }

    /// Mutable view in the same order as [`DeladParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.x0];
        out.extend(self.corrections.iter_mut());
        for layer in self
            .stages
            .iter_mut()
            .chain(std::iter::once(&mut self.fusion))
        {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }
}

/// Parameter count for an `H`x`W` input without building the parameters.
pub fn parameter_count(shape: (usize, usize)) -> usize {
    4 * shape.0 * shape.1 + STAGES * (9 + 1) + (9 * STAGES + 1)
}
