//! Confidence margin, the exponential importance-weight kernel, and weight
//! normalization.
//!
//! The margin of a probability row is the confidence in the true label minus
//! the best wrong-label confidence; it is positive iff the example is
//! classified correctly. The importance weight `exp(-alpha * margin)`
//! upweights vulnerable and misclassified examples; `alpha = 0` is the
//! unweighted limiting case.

use crate::error::{Error, Result};
use crate::nn::softmax_probs;
use serde::{Deserialize, Serialize};

/// Strength of the exponential weight kernel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightConfig {
    pub alpha: f64,
}

impl WeightConfig {
    pub fn new(alpha: f64) -> Result<WeightConfig> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        Ok(WeightConfig { alpha })
    }
}

/// Raw and normalized importance weights over a set of examples.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub raw: Vec<f64>,
    /// `raw / sum(raw)`; sums to one.
    pub normalized: Vec<f64>,
}

/// Confidence margin `p[label] - max_{t != label} p[t]`, in `[-1, 1]`.
pub fn margin(probs: &[f64], label: usize) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::Config("margin needs at least two classes".into()));
    }
    if label >= probs.len() {
        return Err(Error::Domain(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    let runner = crate::nn::argmax_excluding(probs, label);
    Ok(probs[label] - probs[runner])
}

/// Margin computed from raw logits.
pub fn margin_from_logits(logits: &[f64], label: usize) -> Result<f64> {
    let probs = softmax_probs(&[logits.to_vec()])?;
    margin(&probs[0], label)
}

/// Classification indicator with a deterministic tie-break: an example counts
/// as correct iff the smallest-index argmax of `probs` equals the label.
pub fn is_correct(probs: &[f64], label: usize) -> bool {
    crate::nn::argmax(probs) == label
}

/// The exponential kernel `exp(-alpha * margin)`.
///
/// Strictly decreasing in the margin for `alpha > 0`; identically one when
/// `alpha = 0`; range `[exp(-alpha), exp(alpha)]` over margins in `[-1, 1]`.
pub fn importance_weight(margin: f64, cfg: &WeightConfig) -> f64 {
    (-cfg.alpha * margin).exp()
}

/// Normalizes strictly positive raw weights to sum to one.
pub fn normalize(raw: &[f64]) -> Result<WeightVector> {
    if raw.is_empty() {
        return Err(Error::Domain(
            "cannot normalize an empty weight vector".into(),
        ));
    }
    if !raw.iter().all(|w| w.is_finite() && *w > 0.0) {
        return Err(Error::Domain(
            "raw weights must be finite and strictly positive".into(),
        ));
    }
    let sum: f64 = raw.iter().sum();
    let normalized = raw.iter().map(|w| w / sum).collect();
    Ok(WeightVector {
        raw: raw.to_vec(),
        normalized,
    })
}
