use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Pass threshold on the relative error. Also used to flag
    /// non-differentiable coordinates, see [`grad_check`].
    pub tolerance: f64,
    /// Coordinates checked per leaf (all of them if the leaf is smaller).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            samples: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub leaf: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because they sit on a kink (e.g. relu at 0).
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves
            .iter()
            .map(|l| l.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar graph against central
/// differences.
///
/// `builder` receives fresh leaf nodes (all with `requires_grad`) in the
/// order of `leaves` and returns the scalar root. A coordinate is treated as
/// non-differentiable and skipped when the central difference disagrees with
/// the analytic gradient *and* the two one-sided differences disagree with
/// each other by more than the tolerance, which is the signature of a kink.
pub fn grad_check<F>(
    builder: F,
    leaves: &[Tensor],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step must be positive, got {}",
            cfg.step
        )));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids = values
            .iter()
            .map(|v| g.leaf(v.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let root = builder(&mut g, &ids)?;
        Ok(g.value(root).item())
    };

    let mut graph = Graph::new();
    let ids = leaves
        .iter()
        .map(|v| graph.leaf(v.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let root = builder(&mut graph, &ids)?;
    let base = graph.value(root).item();
    if eval(leaves)?.to_bits() != base.to_bits() {
        return Err(Error::Graph("builder is not deterministic".into()));
    }
    graph.backward(root)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(leaves.len());
    let mut values = leaves.to_vec();
    for (li, id) in ids.iter().enumerate() {
        let n = leaves[li].len();
        let analytic = graph
            .grad(*id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = if n <= cfg.samples {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.samples).into_vec();
            c.sort_unstable();
            c
        };

        let mut report = LeafReport {
            leaf: li,
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for k in coords {
            let orig = leaves[li].data()[k];
            values[li].data_mut()[k] = orig + cfg.step;
            let plus = eval(&values)?;
            values[li].data_mut()[k] = orig - cfg.step;
            let minus = eval(&values)?;
            values[li].data_mut()[k] = orig;

            let central = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(central, analytic[k]);
            if err > cfg.tolerance {
                let forward = (plus - base) / cfg.step;
                let backward = (base - minus) / cfg.step;
                if relative_error(forward, backward) > cfg.tolerance {
                    report.excluded += 1;
                    continue;
                }
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        leaves: reports,
        tolerance: cfg.tolerance,
    })
}
