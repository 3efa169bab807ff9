//! Independent verification oracles.
//!
//! These deliberately avoid the code paths they validate: gradient checks
//! drive central finite differences over a straight-line re-implementation
//! of the dense forward pass, and the DRO oracle maximizes over closed-form
//! stationary points enumerated per support set instead of running the
//! bisection solver. They back the `selfcheck` command and the heavier test
//! suites.
//!
//! Central differences are only meaningful where the loss is differentiable
//! across the whole probe interval. The rectifier makes the loss piecewise
//! smooth, so each probe records the rectifier activation pattern at both
//! evaluation points and skips the component when the patterns differ.

use crate::error::Result;
use crate::nn::{per_example_loss, Batch, LossSpec, Model};

/// Worst observed disagreement from a gradient comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    /// Largest relative error over the compared components.
    pub max_rel_err: f64,
    /// Components compared (magnitude above the skip threshold, probe
    /// interval free of rectifier kinks).
    pub checked: usize,
    /// Components skipped as too small to compare relatively.
    pub skipped: usize,
    /// Components skipped because the probe straddled a rectifier kink.
    pub kinks: usize,
}

impl GradCheck {
    fn update(&mut self, analytic: f64, numeric: f64, skip_below: f64) {
        let scale = analytic.abs().max(numeric.abs());
        if scale <= skip_below {
            self.skipped += 1;
            return;
        }
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max((analytic - numeric).abs() / scale);
    }
}

/// Threshold below which gradient components are not compared relatively.
pub const GRAD_SKIP_BELOW: f64 = 1e-8;

/// Straight-line dense forward pass, independent of the library's own
/// implementation. Returns the logits and the rectifier activation pattern.
fn oracle_forward(model: &Model, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let last = model.layers.len() - 1;
    let mut h = x.to_vec();
    let mut pattern = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.out_dim];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut s = layer.bias[o];
            for (i, hv) in h.iter().enumerate() {
                s += layer.weights[o * layer.in_dim + i] * hv;
            }
            *slot = s;
        }
        if l != last {
            for v in &mut out {
                pattern.push(*v > 0.0);
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        h = out;
    }
    (h, pattern)
}

/// Weighted batch loss `(1/m) sum_i w_i l_i` plus the concatenated
/// activation patterns of every example.
fn batch_loss_and_pattern(
    model: &Model,
    batch: &Batch,
    spec: &LossSpec,
    weights: &[f64],
) -> (f64, Vec<bool>) {
    let mut logits = Vec::with_capacity(batch.len());
    let mut pattern = Vec::new();
    for row in &batch.inputs {
        let (z, p) = oracle_forward(model, row);
        logits.push(z);
        pattern.extend(p);
    }
    let losses = per_example_loss(&logits, &batch.labels, spec).expect("spec validated by caller");
    let loss = losses
        .iter()
        .zip(weights.iter())
        .map(|(l, w)| w * l)
        .sum::<f64>()
        / batch.len() as f64;
    (loss, pattern)
}

/// Mutable access to the flat parameter index `k` of layer `l` (weights
/// first, then bias).
fn param_slot(m: &mut Model, l: usize, k: usize) -> &mut f64 {
    let layer = &mut m.layers[l];
    if k < layer.weights.len() {
        &mut layer.weights[k]
    } else {
        &mut layer.bias[k - layer.weights.len()]
    }
}

struct CentralDiff {
    slope: f64,
    crossed_kink: bool,
}

fn central_diff(
    model: &mut Model,
    batch: &Batch,
    spec: &LossSpec,
    weights: &[f64],
    l: usize,
    k: usize,
    step: f64,
) -> CentralDiff {
    let orig = *param_slot(model, l, k);
    *param_slot(model, l, k) = orig + step;
    let (plus, pat_plus) = batch_loss_and_pattern(model, batch, spec, weights);
    *param_slot(model, l, k) = orig - step;
    let (minus, pat_minus) = batch_loss_and_pattern(model, batch, spec, weights);
    *param_slot(model, l, k) = orig;
    CentralDiff {
        slope: (plus - minus) / (2.0 * step),
        crossed_kink: pat_plus != pat_minus,
    }
}

fn analytic_component(grad: &crate::nn::ParamGrad, l: usize, k: usize) -> f64 {
    let layer = &grad.layers[l];
    if k < layer.weights.len() {
        layer.weights[k]
    } else {
        layer.bias[k - layer.weights.len()]
    }
}

/// Central-finite-difference check of [`crate::nn::grad_params`] over every
/// parameter component.
pub fn finite_diff_param_check(
    model: &Model,
    batch: &Batch,
    spec: &LossSpec,
    weights: &[f64],
    step: f64,
) -> Result<GradCheck> {
    let analytic = crate::nn::grad_params(model, batch, spec, weights)?;
    let mut check = GradCheck::default();
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        for k in 0..model.layers[l].weights.len() + model.layers[l].bias.len() {
            let fd = central_diff(&mut probe, batch, spec, weights, l, k, step);
            if fd.crossed_kink {
                check.kinks += 1;
                continue;
            }
            check.update(
                analytic_component(&analytic, l, k),
                fd.slope,
                GRAD_SKIP_BELOW,
            );
        }
    }
    Ok(check)
}

/// Central-finite-difference check of [`crate::nn::grad_input`] over every
/// input coordinate.
pub fn finite_diff_input_check(
    model: &Model,
    input: &[f64],
    label: usize,
    spec: &LossSpec,
    step: f64,
) -> Result<GradCheck> {
    let analytic = crate::nn::grad_input(model, input, label, spec)?;
    let mut check = GradCheck::default();
    let mut probe = input.to_vec();
    let loss_at = |probe: &[f64], model: &Model| {
        let batch = Batch::new(vec![probe.to_vec()], vec![label]).expect("single example");
        batch_loss_and_pattern(model, &batch, spec, &[1.0])
    };
    for i in 0..input.len() {
        probe[i] = input[i] + step;
        let (plus, pat_plus) = loss_at(&probe, model);
        probe[i] = input[i] - step;
        let (minus, pat_minus) = loss_at(&probe, model);
        probe[i] = input[i];
        if pat_plus != pat_minus {
            check.kinks += 1;
            continue;
        }
        check.update(analytic[i], (plus - minus) / (2.0 * step), GRAD_SKIP_BELOW);
    }
    Ok(check)
}

/// Finite-difference check of [`crate::training::trades_batch_loss`]'s
/// parameter gradient.
pub fn finite_diff_trades_check(
    model: &Model,
    batch: &Batch,
    adversarial: &Batch,
    lambda_inv: f64,
    weights: &[f64],
    step: f64,
) -> Result<GradCheck> {
    let loss_of = |m: &Model| -> (f64, Vec<bool>) {
        let mut clean_logits = Vec::with_capacity(batch.len());
        let mut adv_logits = Vec::with_capacity(batch.len());
        let mut pattern = Vec::new();
        for (clean, adv) in batch.inputs.iter().zip(adversarial.inputs.iter()) {
            let (z, p) = oracle_forward(m, clean);
            clean_logits.push(z);
            pattern.extend(p);
            let (z, p) = oracle_forward(m, adv);
            adv_logits.push(z);
            pattern.extend(p);
        }
        let ce =
            per_example_loss(&clean_logits, &batch.labels, &LossSpec::CrossEntropy).expect("valid");
        let kl = per_example_loss(
            &adv_logits,
            &adversarial.labels,
            &LossSpec::KlToReference {
                reference: clean_logits,
            },
        )
        .expect("valid");
        let loss = ce
            .iter()
            .zip(kl.iter())
            .zip(weights.iter())
            .map(|((c, k), w)| w * (c + lambda_inv * k))
            .sum::<f64>()
            / batch.len() as f64;
        (loss, pattern)
    };

    let (_, analytic) =
        crate::training::trades_batch_loss(model, batch, adversarial, lambda_inv, weights)?;
    let mut check = GradCheck::default();
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        for k in 0..model.layers[l].weights.len() + model.layers[l].bias.len() {
            let orig = *param_slot(&mut probe, l, k);
            *param_slot(&mut probe, l, k) = orig + step;
            let (plus, pat_plus) = loss_of(&probe);
            *param_slot(&mut probe, l, k) = orig - step;
            let (minus, pat_minus) = loss_of(&probe);
            *param_slot(&mut probe, l, k) = orig;
            if pat_plus != pat_minus {
                check.kinks += 1;
                continue;
            }
            check.update(
                analytic_component(&analytic, l, k),
                (plus - minus) / (2.0 * step),
                GRAD_SKIP_BELOW,
            );
        }
    }
    Ok(check)
}

/// Best objective of the chi-squared weight maximization, found by
/// enumerating the closed-form stationary point of every support set.
///
/// For a support `S` with `k` entries, either the budget binds — giving
/// `objective = mean_S + sqrt(var_S * (2 rho / N - (N - k) / (k N)))` when the
/// resulting weights stay nonnegative — or the candidate is uniform over `S`,
/// feasible when `(N - k) / (2 k) <= rho`. The maximum over all feasible
/// candidates is the exact optimum. Exponential in `N`; intended for `N <= 15`.
pub fn dro_oracle_enumerate(losses: &[f64], rho: f64) -> f64 {
    let n = losses.len();
    assert!((1..=15).contains(&n), "oracle supports 1..=15 losses");
    assert!(rho >= 0.0);
    let nf = n as f64;
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let k = mask.count_ones() as usize;
        let kf = k as f64;
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mean: f64 = members.iter().map(|&i| losses[i]).sum::<f64>() / kf;
        let var: f64 = members.iter().map(|&i| (losses[i] - mean).powi(2)).sum();

        // uniform-over-support candidate (covers the slack-budget optimum)
        if (nf - kf) / (2.0 * kf) <= rho + 1e-12 {
            best = best.max(mean);
        }

        // budget-tight candidate from the stationarity conditions
        let d = 2.0 * rho / nf - (nf - kf) / (kf * nf);
        if var > 0.0 && d > 0.0 {
            let lambda = (var / d).sqrt();
            let feasible = members
                .iter()
                .all(|&i| 1.0 / kf + (losses[i] - mean) / lambda >= -1e-12);
            if feasible {
                best = best.max(mean + (var * d).sqrt());
            }
        }
    }
    best
}

/// Checks that `adv` stays inside the epsilon ball around `origin` and the
/// unit box, within `tol`.
pub fn within_ball_and_box(origin: &[f64], adv: &[f64], epsilon: f64, tol: f64) -> bool {
    origin.len() == adv.len()
        && origin
            .iter()
            .zip(adv.iter())
            .all(|(o, a)| (a - o).abs() <= epsilon + tol && (-tol..=1.0 + tol).contains(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    #[test]
    fn gradients_match_finite_differences_on_a_seeded_net() {
        let model = Model::new(&[4, 6, 3], 123).unwrap();
        let batch = Batch::new(
            vec![vec![0.2, 0.8, 0.1, 0.5], vec![0.9, 0.3, 0.6, 0.4]],
            vec![0, 2],
        )
        .unwrap();
        let check =
            finite_diff_param_check(&model, &batch, &LossSpec::CrossEntropy, &[0.7, 1.4], 1e-5)
                .unwrap();
        assert!(check.checked > 0);
        assert!(check.max_rel_err < 1e-4, "rel err {}", check.max_rel_err);

        let check =
            finite_diff_input_check(&model, &batch.inputs[0], 1, &LossSpec::CrossEntropy, 1e-5)
                .unwrap();
        assert!(check.max_rel_err < 1e-4, "rel err {}", check.max_rel_err);
    }

    #[test]
    fn trades_gradient_matches_finite_differences() {
        let model = Model::new(&[3, 5, 2], 7).unwrap();
        let batch = Batch::new(vec![vec![0.2, 0.8, 0.5], vec![0.6, 0.1, 0.9]], vec![0, 1]).unwrap();
        let adv = Batch::new(
            vec![vec![0.25, 0.74, 0.55], vec![0.55, 0.16, 0.86]],
            vec![0, 1],
        )
        .unwrap();
        let check = finite_diff_trades_check(&model, &batch, &adv, 6.0, &[1.3, 0.6], 1e-5).unwrap();
        assert!(check.max_rel_err < 1e-4, "rel err {}", check.max_rel_err);
    }

    #[test]
    fn probes_across_a_rectifier_kink_are_skipped_not_compared() {
        // first hidden unit sits exactly on the kink for this input
        let mut l0 = Layer::zeros(1, 2);
        l0.weights[0] = 1.0;
        l0.bias[0] = -0.5; // pre-activation 0 at x = 0.5
        l0.weights[1] = 0.3;
        let mut l1 = Layer::zeros(2, 2);
        l1.weights[0] = 1.0;
        l1.weights[3] = 1.0;
        let model = Model::from_layers(vec![l0, l1]).unwrap();
        let batch = Batch::new(vec![vec![0.5]], vec![0]).unwrap();
        let check =
            finite_diff_param_check(&model, &batch, &LossSpec::CrossEntropy, &[1.0], 1e-5).unwrap();
        assert!(
            check.kinks > 0,
            "expected kink-straddling probes to be skipped"
        );
        assert!(check.max_rel_err < 1e-4, "rel err {}", check.max_rel_err);
    }

    #[test]
    fn oracle_agrees_with_hand_solvable_cases() {
        // rho = 0 forces uniform weights
        let losses = [1.0, 2.0, 4.0];
        assert!((dro_oracle_enumerate(&losses, 0.0) - 7.0 / 3.0).abs() < 1e-12);
        // saturated budget reaches the best vertex
        assert!((dro_oracle_enumerate(&losses, 10.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ball_and_box_check() {
        assert!(within_ball_and_box(&[0.5, 0.5], &[0.6, 0.4], 0.1, 1e-12));
        assert!(!within_ball_and_box(&[0.5, 0.5], &[0.65, 0.4], 0.1, 1e-12));
        assert!(!within_ball_and_box(&[0.5], &[1.2], 1.0, 1e-12));
    }

    #[test]
    fn zero_model_gradcheck_skips_everything_small() {
        let model = Model::from_layers(vec![Layer::zeros(2, 2)]).unwrap();
        let batch = Batch::new(vec![vec![0.0, 0.0]], vec![0]).unwrap();
        let check =
            finite_diff_param_check(&model, &batch, &LossSpec::CrossEntropy, &[0.0], 1e-5).unwrap();
        assert_eq!(check.max_rel_err, 0.0);
    }
}
