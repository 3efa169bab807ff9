//! Minimal differentiable feed-forward network.
//!
//! A [`Model`] is a stack of dense layers with rectifier activations between
//! them; the final layer emits raw logits. Everything runs in `f64` so exact
//! gradients can be validated against central finite differences.
//!
//! Forward passes, losses, and gradients are pure functions of immutable
//! values and safe to call concurrently; training mutates parameters only
//! through [`sgd_step`] / [`Model::sgd_step_in_place`].

mod grad;
mod io;

pub use grad::{grad_input, grad_params, sgd_step, LayerGrad, ParamGrad};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use rand::distributions::{Distribution, Uniform};

/// One dense layer: `z = W x + b` with `W` row-major of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if self.weights.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(Error::Config(format!(
                "layer buffers do not match dims ({}x{})",
                self.out_dim, self.in_dim
            )));
        }
        if !self
            .weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("layer parameters must be finite".into()));
        }
        Ok(())
    }

    /// `out = W x + b`, no activation.
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut sum = self.bias[o];
            for (w, v) in row.iter().zip(x.iter()) {
                sum += w * v;
            }
            *slot = sum;
        }
    }
}

/// Feed-forward classifier with rectifier activations between layers.
/// The last layer's output is the logit vector (no activation).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    /// Builds a model with the given layer widths, e.g. `[784, 256, 128, 10]`.
    ///
    /// Weights are drawn uniformly from `[-b, b]` with
    /// `b = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn new(dims: &[usize], seed: u64) -> Result<Model> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "a model needs at least input and output widths".into(),
            ));
        }
        let mut rng = rng_from(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::Config("layer dimensions must be positive".into()));
            }
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weights = (0..fan_in * fan_out)
                .map(|_| dist.sample(&mut rng))
                .collect();
            layers.push(Layer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Model { layers })
    }

    /// Builds a model from explicit layers, checking that consecutive
    /// dimensions agree and all parameters are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "consecutive layer dims disagree: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Model { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Layer widths including input and output, e.g. `[784, 256, 128, 10]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Logits for a single input.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "input width {} does not match model input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.trace(x).into_logits())
    }

    /// Forward pass caching post-activation values for backpropagation.
    /// `acts[0]` is the input, `acts[i]` the rectified output of layer `i`,
    /// and `acts[L]` the raw logits.
    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            layer.affine(acts.last().expect("non-empty acts"), &mut out);
            if i != last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// `theta -= lr * grad`, in place.
    pub fn sgd_step_in_place(&mut self, grad: &ParamGrad, lr: f64) {
        grad::apply_sgd(self, grad, lr);
    }
}

pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has logits")
    }

    pub(crate) fn into_logits(mut self) -> Vec<f64> {
        self.acts.pop().expect("trace has logits")
    }
}

/// Logits for a batch of inputs; rows are processed independently.
pub fn forward(model: &Model, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    for row in inputs {
        if row.len() != model.input_dim() {
            return Err(Error::Config(format!(
                "input width {} does not match model input {}",
                row.len(),
                model.input_dim()
            )));
        }
    }
    Ok(crate::parallel::map_indexed(inputs.len(), |i| {
        model.trace(&inputs[i]).into_logits()
    }))
}

/// A labeled mini-batch. Feature rows live in `[0, 1]^d`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Batch> {
        if inputs.is_empty() {
            return Err(Error::Domain("batch must hold at least one example".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Domain(format!(
                "batch has {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Per-example loss selection.
///
/// The reference logits exist only for the KL flavor (one row per example),
/// so an inconsistent combination is unrepresentable.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// `-log softmax(z)[y]`.
    CrossEntropy,
    /// `KL(softmax(reference_row) || softmax(z))` per row. The reference rows
    /// are fixed targets; gradients flow only through `z`.
    KlToReference { reference: Vec<Vec<f64>> },
    /// `max_{t != y} z_t - z_y`; negative iff the logits rank the label first.
    LogitMargin,
}

impl LossSpec {
    /// Checks the reference shape against a batch of `m` examples.
    pub(crate) fn validate_for(&self, m: usize, class_count: usize) -> Result<()> {
        if let LossSpec::KlToReference { reference } = self {
            if reference.len() != m {
                return Err(Error::Config(format!(
                    "loss reference holds {} rows for {} examples",
                    reference.len(),
                    m
                )));
            }
            for row in reference {
                if row.len() != class_count {
                    return Err(Error::Config(format!(
                        "loss reference row width {} does not match {} classes",
                        row.len(),
                        class_count
                    )));
                }
            }
        }
        Ok(())
    }

    fn reference_row(&self, i: usize, m: usize, class_count: usize) -> Result<Option<&[f64]>> {
        match self {
            LossSpec::KlToReference { reference } => {
                if reference.len() != m {
                    return Err(Error::Config(format!(
                        "loss reference holds {} rows for {} examples",
                        reference.len(),
                        m
                    )));
                }
                let row = &reference[i];
                if row.len() != class_count {
                    return Err(Error::Config(format!(
                        "loss reference row width {} does not match {} classes",
                        row.len(),
                        class_count
                    )));
                }
                Ok(Some(row))
            }
            _ => Ok(None),
        }
    }
}

/// A single example's view of [`LossSpec`].
#[derive(Debug, Clone, Copy)]
pub(crate) enum LossKind<'a> {
    Ce,
    Kl(&'a [f64]),
    Margin,
}

impl<'a> LossKind<'a> {
    pub(crate) fn from_spec(
        spec: &'a LossSpec,
        i: usize,
        m: usize,
        class_count: usize,
    ) -> Result<Self> {
        Ok(match spec.reference_row(i, m, class_count)? {
            Some(row) => LossKind::Kl(row),
            None => match spec {
                LossSpec::CrossEntropy => LossKind::Ce,
                LossSpec::LogitMargin => LossKind::Margin,
                LossSpec::KlToReference { .. } => unreachable!("reference handled above"),
            },
        })
    }
}

/// `log(sum(exp(z)))` with max subtraction.
fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of one logit row, max-subtracted for overflow safety.
pub(crate) fn softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Row-wise softmax probabilities. Each output row sums to one.
pub fn softmax_probs(logits: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    for row in logits {
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("softmax requires finite logits".into()));
        }
    }
    Ok(logits.iter().map(|row| softmax_row(row)).collect())
}

/// Index of the largest logit/probability, smallest index winning ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Runner-up class: the `t != label` maximizing `values[t]`, smallest index
/// winning ties.
pub(crate) fn argmax_excluding(values: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (i, v) in values.iter().enumerate() {
        if i == label {
            continue;
        }
        if best == usize::MAX || *v > values[best] {
            best = i;
        }
    }
    best
}

/// Loss value and its gradient with respect to the logits.
pub(crate) fn loss_and_logit_grad(z: &[f64], label: usize, kind: LossKind<'_>) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Ce => {
            let lse = log_sum_exp(z);
            let loss = lse - z[label];
            let mut g = softmax_row(z);
            g[label] -= 1.0;
            (loss, g)
        }
        LossKind::Kl(reference) => {
            let p = softmax_row(reference);
            let q = softmax_row(z);
            let lse = log_sum_exp(z);
            let ref_lse = log_sum_exp(reference);
            let mut loss = 0.0;
            for c in 0..z.len() {
                if p[c] > 0.0 {
                    // log p_c - log q_c, both from the stable log-sum-exp form
                    loss += p[c] * ((reference[c] - ref_lse) - (z[c] - lse));
                }
            }
            let g: Vec<f64> = q.iter().zip(p.iter()).map(|(qc, pc)| qc - pc).collect();
            (loss, g)
        }
        LossKind::Margin => {
            let runner = argmax_excluding(z, label);
            let loss = z[runner] - z[label];
            let mut g = vec![0.0; z.len()];
            g[runner] += 1.0;
            g[label] -= 1.0;
            (loss, g)
        }
    }
}

fn check_labels(logits: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if logits.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    for (row, &y) in logits.iter().zip(labels.iter()) {
        if y >= row.len() {
            return Err(Error::Domain(format!(
                "label {} out of range for {} classes",
                y,
                row.len()
            )));
        }
    }
    Ok(())
}

/// Per-example losses for a batch of logit rows.
pub fn per_example_loss(
    logits: &[Vec<f64>],
    labels: &[usize],
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    let m = logits.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let kind = LossKind::from_spec(spec, i, m, logits[i].len())?;
        out.push(loss_and_logit_grad(&logits[i], labels[i], kind).0);
    }
    Ok(out)
}
