//! Central-difference verification of the analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{DetectionGraph, EdgeLabels};
use crate::model::{weight_group, ModelParams, WEIGHT_GROUPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per weight group.
    pub samples: usize,
    pub tolerance: f64,
    /// A coordinate is resampled as straddling a non-differentiable point
    /// (a ReLU or absolute-value kink) when differences at `step` and
    /// `step / 2` disagree by more than this fraction of the slope, beyond
    /// rounding noise.
    pub kink_tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, samples: 16, tolerance: 1e-4, kink_tolerance: 1e-5, seed: 0 }
    }
}

/// Result for one weight group: `relative_error` is
/// `|analytic - numeric| / max(|analytic|, |numeric|)` over the sampled
/// coordinates, or the plain numeric norm when both vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    pub coordinates: usize,
    /// Sampled coordinates rejected as kinks.
    pub skipped: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub relative_error: f64,
    pub passed: bool,
}

/// Compares analytic and numeric gradients per weight group. Coordinates
/// with non-zero analytic gradient are preferred when sampling, and at
/// least one zero-gradient coordinate is included when available.
pub fn check_gradients(
    model: &ModelParams,
    graph: &DetectionGraph,
    labels: &EdgeLabels,
    options: &GradCheckOptions,
) -> Result<Vec<GroupCheck>> {
    let (loss, grad) = model.compute_gradients(graph, labels)?;
    let base = loss.total;
    let names: Vec<String> = grad.tensors().iter().map(|t| t.name.clone()).collect();
    let grad_data: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut out = Vec::new();
    for group in WEIGHT_GROUPS {
        let mut nonzero = Vec::new();
        let mut zero = Vec::new();
        for (ti, name) in names.iter().enumerate() {
            if weight_group(name) != group {
                continue;
            }
            for (ei, g) in grad_data[ti].iter().enumerate() {
                if *g != 0.0 { nonzero.push((ti, ei)) } else { zero.push((ti, ei)) }
            }
        }
        if nonzero.is_empty() && zero.is_empty() {
            continue;
        }
        nonzero.shuffle(&mut rng);
        zero.shuffle(&mut rng);
        let want_zero = options.samples.saturating_sub(nonzero.len()).max(1);

        let (mut diff, mut an, mut nu) = (0.0, 0.0, 0.0);
        let (mut coordinates, mut skipped) = (0, 0);
        let h = options.step;
        let noise = 100.0 * f64::EPSILON * base.abs().max(1.0) / h;
        for (pool, want) in [(nonzero, options.samples), (zero, want_zero)] {
            let mut taken = 0;
            for (ti, ei) in pool.into_iter().take(8 * want) {
                if taken == want {
                    break;
                }
                let orig = probe.weights.tensors_mut()[ti][ei];
                let mut at = |delta: f64| -> Result<f64> {
                    probe.weights.tensors_mut()[ti][ei] = orig + delta;
                    let v = probe.loss(graph, labels)?.total;
                    probe.weights.tensors_mut()[ti][ei] = orig;
                    Ok(v)
                };
                let (plus, minus) = (at(h)?, at(-h)?);
                let (plus2, minus2) = (at(h / 2.0)?, at(-h / 2.0)?);
                let numeric = (plus - minus) / (2.0 * h);
                let half = (plus2 - minus2) / h;
                // second differences of a smooth function scale with the step
                let bend = (plus - 2.0 * base + minus) / h - 4.0 * (plus2 - 2.0 * base + minus2) / h;
                let limit = options.kink_tolerance * numeric.abs().max(half.abs()) + noise;
                if libm::fabs(numeric - half) > limit || libm::fabs(bend) > limit {
                    skipped += 1;
                    continue;
                }
                let analytic = grad_data[ti][ei];
                diff += (analytic - numeric) * (analytic - numeric);
                an += analytic * analytic;
                nu += numeric * numeric;
                taken += 1;
            }
            coordinates += taken;
        }
        let (diff, an, nu) = (libm::sqrt(diff), libm::sqrt(an), libm::sqrt(nu));
        let scale = an.max(nu);
        let relative_error = if scale > 1e-12 { diff / scale } else { nu };
        out.push(GroupCheck {
            group: group.into(),
            coordinates,
            skipped,
            analytic_norm: an,
            numeric_norm: nu,
            relative_error,
            passed: coordinates > 0 && relative_error < options.tolerance,
        });
    }
    Ok(out)
}
