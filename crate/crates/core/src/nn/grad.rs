//! Exact gradients via reverse-mode accumulation through the dense stack.

use super::{Batch, LossKind, LossSpec, Model, Trace};
use crate::error::{Error, Result};
use crate::parallel::{map_chunks, CHUNK};

/// Gradient buffer for one layer, same shapes as [`super::Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with the same shape as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrad {
    pub fn zeros_like(model: &Model) -> ParamGrad {
        ParamGrad {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            for (x, y) in a.weights.iter_mut().zip(b.weights.iter()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            for v in &mut l.weights {
                *v *= c;
            }
            for v in &mut l.bias {
                *v *= c;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

impl Model {
    /// Accumulates `scale * dL/dtheta` into `into`, given the cached forward
    /// trace and the loss gradient at the logits.
    pub(crate) fn backprop_params(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        scale: f64,
        into: &mut ParamGrad,
    ) {
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &trace.acts[l];
            let grad = &mut into.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                let ds = d * scale;
                grad.bias[o] += ds;
                let row = &mut grad.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, v) in row.iter_mut().zip(x.iter()) {
                    *slot += ds * v;
                }
            }
            if l == 0 {
                break;
            }
            delta = self.backprop_through_layer(l, &delta, &trace.acts[l]);
        }
    }

    /// Propagates the logit gradient all the way back to the input vector.
    pub(crate) fn backprop_input(&self, trace: &Trace, dlogits: &[f64]) -> Vec<f64> {
        let mut delta = dlogits.to_vec();
        for l in (1..self.layers.len()).rev() {
            delta = self.backprop_through_layer(l, &delta, &trace.acts[l]);
        }
        // first layer: W^T delta, no activation on the raw input
        let layer = &self.layers[0];
        let mut dx = vec![0.0; layer.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (slot, w) in dx.iter_mut().zip(row.iter()) {
                *slot += w * d;
            }
        }
        dx
    }

    /// `W_l^T delta`, masked by the rectifier at layer `l`'s input
    /// (`post_act` is the rectified output of layer `l - 1`).
    fn backprop_through_layer(&self, l: usize, delta: &[f64], post_act: &[f64]) -> Vec<f64> {
        let layer = &self.layers[l];
        let mut dx = vec![0.0; layer.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (slot, w) in dx.iter_mut().zip(row.iter()) {
                *slot += w * d;
            }
        }
        for (slot, a) in dx.iter_mut().zip(post_act.iter()) {
            if *a <= 0.0 {
                *slot = 0.0;
            }
        }
        dx
    }
}

fn validate_batch(model: &Model, batch: &Batch) -> Result<()> {
    for row in &batch.inputs {
        if row.len() != model.input_dim() {
            return Err(Error::Config(format!(
                "input width {} does not match model input {}",
                row.len(),
                model.input_dim()
            )));
        }
    }
    for &y in &batch.labels {
        if y >= model.output_dim() {
            return Err(Error::Domain(format!(
                "label {} out of range for {} classes",
                y,
                model.output_dim()
            )));
        }
    }
    Ok(())
}

/// Gradient of `(1/m) * sum_i w_i * loss_i` with respect to the parameters.
///
/// The weights are treated as constants: no gradient flows through them.
/// Per-example contributions are accumulated over fixed-size index chunks and
/// combined in chunk order, so the result is byte-identical whether or not the
/// chunks run in parallel.
pub fn grad_params(
    model: &Model,
    batch: &Batch,
    spec: &LossSpec,
    example_weights: &[f64],
) -> Result<ParamGrad> {
    validate_batch(model, batch)?;
    let m = batch.len();
    if example_weights.len() != m {
        return Err(Error::Config(format!(
            "{} weights for {} examples",
            example_weights.len(),
            m
        )));
    }
    if !example_weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
        return Err(Error::Domain(
            "example weights must be finite and nonnegative".into(),
        ));
    }
    spec.validate_for(m, model.output_dim())?;

    let chunks = map_chunks(m, CHUNK, |range| {
        let mut acc = ParamGrad::zeros_like(model);
        for i in range {
            let trace = model.trace(&batch.inputs[i]);
            let kind = LossKind::from_spec(spec, i, m, model.output_dim())
                .expect("spec validated against batch");
            let (_, dlogits) = super::loss_and_logit_grad(trace.logits(), batch.labels[i], kind);
            model.backprop_params(&trace, &dlogits, example_weights[i] / m as f64, &mut acc);
        }
        acc
    });
    let mut total = ParamGrad::zeros_like(model);
    for c in &chunks {
        total.add_assign(c);
    }
    Ok(total)
}

/// Exact gradient of the chosen per-example loss with respect to the input.
///
/// For the KL flavor the loss spec must hold exactly one reference row.
pub fn grad_input(model: &Model, input: &[f64], label: usize, spec: &LossSpec) -> Result<Vec<f64>> {
    if input.len() != model.input_dim() {
        return Err(Error::Config(format!(
            "input width {} does not match model input {}",
            input.len(),
            model.input_dim()
        )));
    }
    if label >= model.output_dim() {
        return Err(Error::Domain(format!(
            "label {} out of range for {} classes",
            label,
            model.output_dim()
        )));
    }
    let kind = LossKind::from_spec(spec, 0, 1, model.output_dim())?;
    let trace = model.trace(input);
    let (_, dlogits) = super::loss_and_logit_grad(trace.logits(), label, kind);
    Ok(model.backprop_input(&trace, &dlogits))
}

pub(crate) fn apply_sgd(model: &mut Model, grad: &ParamGrad, lr: f64) {
    debug_assert_eq!(model.layers.len(), grad.layers.len());
    for (layer, g) in model.layers.iter_mut().zip(grad.layers.iter()) {
        for (w, d) in layer.weights.iter_mut().zip(g.weights.iter()) {
            *w -= lr * d;
        }
        for (b, d) in layer.bias.iter_mut().zip(g.bias.iter()) {
            *b -= lr * d;
        }
    }
}

/// `theta' = theta - lr * grad`, elementwise, as a new model.
pub fn sgd_step(model: &Model, grad: &ParamGrad, lr: f64) -> Result<Model> {
    if lr <= 0.0 || lr.is_nan() {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if model.layers.len() != grad.layers.len()
        || model
            .layers
            .iter()
            .zip(grad.layers.iter())
            .any(|(l, g)| l.weights.len() != g.weights.len() || l.bias.len() != g.bias.len())
    {
        return Err(Error::Config("gradient shape does not match model".into()));
    }
    let mut out = model.clone();
    apply_sgd(&mut out, grad, lr);
    Ok(out)
}
