//! Finite-difference verification of backpropagation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::layers::{softmax_cross_entropy, softmax_cross_entropy_backward};
use super::network::{ParamBlock, ParamKind};
use super::{Network, Tensor};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; central differences cannot resolve them better.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Parameters checked per weight or bias block; 0 checks all of them.
    pub samples_per_block: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { epsilon: 1e-5, samples_per_block: 24, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamAddress {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamAddress>,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU sign or a pooling
    /// argmax; the loss is not differentiable across such a kink.
    pub skipped_kinks: usize,
    pub loss: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the mean cross-entropy on `(x, labels)`
/// with central differences. Dropout is off. A perturbed parameter only
/// changes activations from its own layer on, so each difference reruns
/// the network from that layer.
pub fn grad_check(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let base = net.forward(x)?;
    let (loss, probs) = softmax_cross_entropy(base.logits(), labels)?;
    let grads = net.backward(&base, &softmax_cross_entropy_backward(&probs, labels))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        loss,
    };
    let blocks: Vec<ParamBlock> = net.param_blocks();
    for (bi, block) in blocks.iter().enumerate() {
        let indices: Vec<usize> = if config.samples_per_block == 0 || block.len <= config.samples_per_block {
            (0..block.len).collect()
        } else {
            let mut v = sample(&mut rng, block.len, config.samples_per_block).into_vec();
            v.sort_unstable();
            v
        };
        let input = &base.inputs[block.layer];
        for j in indices {
            let orig = work.params()[bi][j];
            let mut eval = |v: f64| -> Result<(f64, super::Forward)> {
                work.params_mut()[bi][j] = v;
                let f = work.run_from(block.layer, input.clone(), None)?;
                let (l, _) = softmax_cross_entropy(f.logits(), labels)?;
                Ok((l, f))
            };
            let (lp, fp) = eval(orig + config.epsilon)?;
            let (lm, fm) = eval(orig - config.epsilon)?;
            work.params_mut()[bi][j] = orig;
            if !net.same_pattern(&base, &fp, block.layer) || !net.same_pattern(&base, &fm, block.layer) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * config.epsilon);
            let err = relative_error(grads[bi][j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(ParamAddress { layer: block.layer, kind: block.kind, index: j });
            }
        }
    }
    Ok(report)
}
