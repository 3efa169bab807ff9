//! Projected gradient descent attacks under an l-infinity budget.
//!
//! All flavors share one loop: start from the input plus small Gaussian
//! noise, then repeat `steps` times: ascend the per-example loss by
//! `step_size * sign(grad)` and project back onto the epsilon ball
//! intersected with the `[0, 1]^d` box.
//!
//! The weighted flavor rescales the cross-entropy loss by the detached scalar
//! `exp(-alpha * margin)`, recomputed at every iterate. A positive scalar
//! never changes the sign of the gradient, so the update direction is
//! computed from the unscaled gradient; the weight is still evaluated each
//! step and is observable through [`weighted_pgd_trace`].
//!
//! Per-example attacks are independent: batch variants derive one seed per
//! example, so results are identical whether examples run in parallel or
//! sequentially.

use crate::error::{Error, Result};
use crate::nn::{loss_and_logit_grad, softmax_row, Batch, LossKind, Model};
use crate::rng::{mix_seed, rng_from};
use crate::weighting::{importance_weight, margin, WeightConfig};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Which loss the attack ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackFlavor {
    /// Cross-entropy loss.
    Ce,
    /// Cross-entropy rescaled by the detached margin weight.
    WeightedCe,
    /// Logit margin `max_{t != y} z_t - z_y`.
    Margin,
}

/// Attack hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackConfig {
    /// l-infinity budget epsilon.
    pub epsilon: f64,
    /// Ascent step size.
    pub step_size: f64,
    /// Number of PGD iterations.
    pub steps: usize,
    pub flavor: AttackFlavor,
    /// Weight-kernel strength; only read by the weighted flavor.
    pub alpha: f64,
    /// Scale of the Gaussian init noise added to the clean input.
    pub init_noise_scale: f64,
    pub seed: u64,
}

pub const DEFAULT_INIT_NOISE_SCALE: f64 = 0.001;

impl AttackConfig {
    pub fn new(
        epsilon: f64,
        step_size: f64,
        steps: usize,
        flavor: AttackFlavor,
        seed: u64,
    ) -> Result<AttackConfig> {
        let cfg = AttackConfig {
            epsilon,
            step_size,
            steps,
            flavor,
            alpha: 0.0,
            init_noise_scale: DEFAULT_INIT_NOISE_SCALE,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<AttackConfig> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be finite and nonnegative, got {}",
                self.alpha
            )));
        }
        if self.init_noise_scale < 0.0 || self.init_noise_scale.is_nan() {
            return Err(Error::Config("init_noise_scale must be nonnegative".into()));
        }
        if self.step_size > self.epsilon {
            log::warn!(
                "attack step_size {} exceeds epsilon {}; every step will land on the ball boundary",
                self.step_size,
                self.epsilon
            );
        }
        Ok(())
    }
}

/// One recorded PGD iteration: the iterate the gradient was taken at and the
/// margin weight evaluated there.
#[derive(Debug, Clone)]
pub struct PgdStep {
    pub iterate: Vec<f64>,
    pub weight: f64,
}

/// Loss driving the inner loop. `Kl` is used by the TRADES-style trainer.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PgdLoss<'a> {
    Ce,
    WeightedCe { alpha: f64 },
    Margin,
    Kl { reference: &'a [f64] },
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp to the epsilon ball around `origin`, then to the unit box. Both are
/// axis-aligned boxes, so the composition is the exact projection onto their
/// intersection.
fn project(x: &mut [f64], origin: &[f64], epsilon: f64) {
    for (v, o) in x.iter_mut().zip(origin.iter()) {
        let lo = (o - epsilon).max(0.0);
        let hi = (o + epsilon).min(1.0);
        *v = v.clamp(lo, hi);
    }
}

fn check_input(model: &Model, input: &[f64], label: usize) -> Result<()> {
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
    Ok(())
}

pub(crate) fn run_pgd(
    model: &Model,
    input: &[f64],
    label: usize,
    loss: PgdLoss<'_>,
    cfg: &AttackConfig,
    seed: u64,
    mut trace: Option<&mut Vec<PgdStep>>,
) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let mut x: Vec<f64> = input
        .iter()
        .map(|v| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            v + cfg.init_noise_scale * noise
        })
        .collect();
    project(&mut x, input, cfg.epsilon);

    for _ in 0..cfg.steps {
        let fwd = model.trace(&x);
        let logits = fwd.logits();
        let (weight, dlogits) = match loss {
            PgdLoss::Ce => (1.0, loss_and_logit_grad(logits, label, LossKind::Ce).1),
            PgdLoss::WeightedCe { alpha } => {
                let probs = softmax_row(logits);
                let m = margin(&probs, label).expect("validated class count");
                let w = importance_weight(m, &WeightConfig { alpha });
                // The weight is a detached positive scalar, so the ascent
                // direction equals the unweighted one; only record it.
                (w, loss_and_logit_grad(logits, label, LossKind::Ce).1)
            }
            PgdLoss::Margin => (1.0, loss_and_logit_grad(logits, label, LossKind::Margin).1),
            PgdLoss::Kl { reference } => (
                1.0,
                loss_and_logit_grad(logits, label, LossKind::Kl(reference)).1,
            ),
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(PgdStep {
                iterate: x.clone(),
                weight,
            });
        }
        let g = model.backprop_input(&fwd, &dlogits);
        for (v, gi) in x.iter_mut().zip(g.iter()) {
            *v += cfg.step_size * sign(*gi);
        }
        project(&mut x, input, cfg.epsilon);
    }
    x
}

/// Standard cross-entropy PGD. Requires `cfg.flavor == Ce`.
pub fn pgd(model: &Model, input: &[f64], label: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    if cfg.flavor != AttackFlavor::Ce {
        return Err(Error::Config("pgd requires the ce flavor".into()));
    }
    cfg.validate()?;
    check_input(model, input, label)?;
    Ok(run_pgd(
        model,
        input,
        label,
        PgdLoss::Ce,
        cfg,
        cfg.seed,
        None,
    ))
}

/// Margin-weighted PGD: each step ascends `s * ce` with the detached weight
/// `s = exp(-alpha * margin)` recomputed at the current iterate. Requires
/// `cfg.flavor == WeightedCe`.
pub fn weighted_pgd(
    model: &Model,
    input: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    if cfg.flavor != AttackFlavor::WeightedCe {
        return Err(Error::Config(
            "weighted_pgd requires the weighted-ce flavor".into(),
        ));
    }
    cfg.validate()?;
    check_input(model, input, label)?;
    if model.output_dim() < 2 {
        return Err(Error::Config(
            "margin weighting needs at least two classes".into(),
        ));
    }
    Ok(run_pgd(
        model,
        input,
        label,
        PgdLoss::WeightedCe { alpha: cfg.alpha },
        cfg,
        cfg.seed,
        None,
    ))
}

/// Like [`weighted_pgd`] but also returns the per-step iterates and weights.
pub fn weighted_pgd_trace(
    model: &Model,
    input: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<(Vec<f64>, Vec<PgdStep>)> {
    if cfg.flavor != AttackFlavor::WeightedCe {
        return Err(Error::Config(
            "weighted_pgd requires the weighted-ce flavor".into(),
        ));
    }
    cfg.validate()?;
    check_input(model, input, label)?;
    let mut steps = Vec::with_capacity(cfg.steps);
    let x = run_pgd(
        model,
        input,
        label,
        PgdLoss::WeightedCe { alpha: cfg.alpha },
        cfg,
        cfg.seed,
        Some(&mut steps),
    );
    Ok((x, steps))
}

/// PGD ascending the logit-margin loss. Requires `cfg.flavor == Margin`.
pub fn margin_pgd(
    model: &Model,
    input: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    if cfg.flavor != AttackFlavor::Margin {
        return Err(Error::Config(
            "margin_pgd requires the margin flavor".into(),
        ));
    }
    cfg.validate()?;
    check_input(model, input, label)?;
    if model.output_dim() < 2 {
        return Err(Error::Config(
            "the margin loss needs at least two classes".into(),
        ));
    }
    Ok(run_pgd(
        model,
        input,
        label,
        PgdLoss::Margin,
        cfg,
        cfg.seed,
        None,
    ))
}

/// PGD ascending `KL(softmax(reference) || softmax(f(x')))`; the inner
/// maximization of the TRADES-style objective.
pub(crate) fn kl_pgd(
    model: &Model,
    input: &[f64],
    label: usize,
    reference: &[f64],
    cfg: &AttackConfig,
    seed: u64,
) -> Vec<f64> {
    run_pgd(
        model,
        input,
        label,
        PgdLoss::Kl { reference },
        cfg,
        seed,
        None,
    )
}

/// Applies the configured attack independently to every example, with one
/// derived seed per example index: `mix_seed(cfg.seed, index)`.
pub fn batch_attack(model: &Model, batch: &Batch, cfg: &AttackConfig) -> Result<Batch> {
    let seeds: Vec<u64> = (0..batch.len())
        .map(|i| mix_seed(cfg.seed, i as u64))
        .collect();
    batch_attack_with_seeds(model, batch, cfg, &seeds)
}

/// [`batch_attack`] with caller-provided per-example seeds. Training and
/// evaluation pass seeds derived from stable example identities, so permuting
/// a batch permutes the outputs identically.
pub fn batch_attack_with_seeds(
    model: &Model,
    batch: &Batch,
    cfg: &AttackConfig,
    seeds: &[u64],
) -> Result<Batch> {
    cfg.validate()?;
    if seeds.len() != batch.len() {
        return Err(Error::Config(format!(
            "{} seeds for {} examples",
            seeds.len(),
            batch.len()
        )));
    }
    for (row, &label) in batch.inputs.iter().zip(batch.labels.iter()) {
        check_input(model, row, label)?;
    }
    if matches!(cfg.flavor, AttackFlavor::WeightedCe | AttackFlavor::Margin)
        && model.output_dim() < 2
    {
        return Err(Error::Config(
            "this attack flavor needs at least two classes".into(),
        ));
    }
    let loss = match cfg.flavor {
        AttackFlavor::Ce => PgdLoss::Ce,
        AttackFlavor::WeightedCe => PgdLoss::WeightedCe { alpha: cfg.alpha },
        AttackFlavor::Margin => PgdLoss::Margin,
    };
    let inputs = crate::parallel::map_indexed(batch.len(), |i| {
        run_pgd(
            model,
            &batch.inputs[i],
            batch.labels[i],
            loss,
            cfg,
            seeds[i],
            None,
        )
    });
    Batch::new(inputs, batch.labels.clone())
}

/// Largest coordinate-wise deviation between a perturbed point and its origin.
pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, LossSpec};

    fn zero_model(d: usize, c: usize) -> Model {
        Model::from_layers(vec![Layer::zeros(d, c)]).unwrap()
    }

    fn cfg(flavor: AttackFlavor) -> AttackConfig {
        AttackConfig::new(0.1, 0.02, 5, flavor, 42).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_only_projected_noise() {
        let model = zero_model(4, 3);
        let x = vec![0.5, 0.2, 0.9, 0.0];
        let mut c = cfg(AttackFlavor::Ce);
        c.steps = 1;
        let adv = pgd(&model, &x, 1, &c).unwrap();
        assert!(linf_distance(&adv, &x) <= c.epsilon + 1e-12);
        assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
        // init noise is tiny, so the point barely moves
        assert!(linf_distance(&adv, &x) <= 10.0 * c.init_noise_scale);
    }

    #[test]
    fn one_step_ascends_cross_entropy_for_linear_model() {
        // z = [w x, 0] with w > 0 and y = 1: increasing x raises the
        // wrong-class logit, so one PGD step moves x upward by step_size.
        let mut layer = Layer::zeros(1, 2);
        layer.weights[0] = 3.0;
        let model = Model::from_layers(vec![layer]).unwrap();
        let x = vec![0.5];
        let mut c = cfg(AttackFlavor::Ce);
        c.steps = 1;
        c.init_noise_scale = 0.0;

        // finite-difference check of the ascent direction
        let h = 1e-6;
        let loss_at = |v: f64| {
            crate::nn::per_example_loss(
                &[model.forward_one(&[v]).unwrap()],
                &[1],
                &LossSpec::CrossEntropy,
            )
            .unwrap()[0]
        };
        let fd = (loss_at(0.5 + h) - loss_at(0.5 - h)) / (2.0 * h);
        assert!(fd > 0.0);

        let adv = pgd(&model, &x, 1, &c).unwrap();
        assert!((adv[0] - (0.5 + c.step_size)).abs() < 1e-12);
    }

    #[test]
    fn projection_clamps_to_ball_and_box() {
        let mut x = vec![1.15];
        project(&mut x, &[0.9], 0.1);
        assert_eq!(x[0], 1.0);
        let mut x = vec![0.3];
        project(&mut x, &[0.9], 0.1);
        assert_eq!(x[0], 0.8);
        let mut x = vec![-0.5];
        project(&mut x, &[0.05], 0.2);
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn weighted_collapses_to_plain_pgd_for_any_alpha() {
        let model = Model::new(&[4, 6, 3], 8).unwrap();
        let x = vec![0.3, 0.8, 0.1, 0.6];
        let plain = pgd(&model, &x, 2, &cfg(AttackFlavor::Ce)).unwrap();
        for alpha in [0.0, 0.7, 2.0] {
            let c = cfg(AttackFlavor::WeightedCe).with_alpha(alpha).unwrap();
            let weighted = weighted_pgd(&model, &x, 2, &c).unwrap();
            assert_eq!(plain, weighted, "alpha={alpha}");
        }
    }

    #[test]
    fn trace_weights_match_independent_forward_pass() {
        let model = Model::new(&[3, 5, 2], 77).unwrap();
        let x = vec![0.4, 0.6, 0.2];
        let c = cfg(AttackFlavor::WeightedCe).with_alpha(1.3).unwrap();
        let (_, steps) = weighted_pgd_trace(&model, &x, 0, &c).unwrap();
        assert_eq!(steps.len(), c.steps);
        for step in &steps {
            let probs =
                crate::nn::softmax_probs(&[model.forward_one(&step.iterate).unwrap()]).unwrap();
            let m = crate::weighting::margin(&probs[0], 0).unwrap();
            let expected = (-c.alpha * m).exp();
            assert_eq!(step.weight, expected);
        }
    }

    #[test]
    fn margin_ascent_direction_for_linear_model() {
        // linear model: d(z_t - z_y)/dx = w_t - w_y, so the step follows
        // sign(w_t - w_y) coordinatewise.
        let mut layer = Layer::zeros(2, 2);
        layer.weights[0] = 1.0; // class 0 row: [1, -2]
        layer.weights[1] = -2.0;
        layer.weights[2] = 0.25; // class 1 row: [0.25, 3]
        layer.weights[3] = 3.0;
        let model = Model::from_layers(vec![layer]).unwrap();
        let x = vec![0.5, 0.5];
        let mut c = cfg(AttackFlavor::Margin);
        c.steps = 1;
        c.init_noise_scale = 0.0;
        let adv = margin_pgd(&model, &x, 0, &c).unwrap();
        // runner-up is class 1; w_1 - w_0 = [-0.75, 5]
        assert!((adv[0] - (0.5 - c.step_size)).abs() < 1e-12);
        assert!((adv[1] - (0.5 + c.step_size)).abs() < 1e-12);
    }

    #[test]
    fn single_example_batch_matches_scalar_attack() {
        let model = Model::new(&[3, 4, 2], 5).unwrap();
        let batch = Batch::new(vec![vec![0.2, 0.5, 0.8]], vec![1]).unwrap();
        let c = cfg(AttackFlavor::Ce);
        let scalar = run_pgd(
            &model,
            &batch.inputs[0],
            1,
            PgdLoss::Ce,
            &c,
            mix_seed(c.seed, 0),
            None,
        );
        let batched = batch_attack(&model, &batch, &c).unwrap();
        assert_eq!(batched.inputs[0], scalar);
    }

    #[test]
    fn permuting_a_batch_permutes_outputs() {
        let model = Model::new(&[3, 4, 2], 5).unwrap();
        let batch = Batch::new(
            vec![
                vec![0.2, 0.5, 0.8],
                vec![0.9, 0.1, 0.4],
                vec![0.3, 0.3, 0.3],
            ],
            vec![1, 0, 1],
        )
        .unwrap();
        let c = cfg(AttackFlavor::Ce);
        let fwd = batch_attack(&model, &batch, &c).unwrap();

        let perm = [2usize, 0, 1];
        let permuted = Batch::new(
            perm.iter().map(|&i| batch.inputs[i].clone()).collect(),
            perm.iter().map(|&i| batch.labels[i]).collect(),
        )
        .unwrap();
        let seeds: Vec<u64> = perm.iter().map(|&i| mix_seed(c.seed, i as u64)).collect();
        let back = batch_attack_with_seeds(&model, &permuted, &c, &seeds).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(back.inputs[j], fwd.inputs[i]);
        }
    }

    #[test]
    fn batch_outputs_satisfy_ball_and_box() {
        let model = Model::new(&[4, 6, 3], 3).unwrap();
        let batch = Batch::new(
            vec![vec![0.0, 1.0, 0.5, 0.25], vec![0.9, 0.8, 0.7, 0.6]],
            vec![0, 2],
        )
        .unwrap();
        for flavor in [
            AttackFlavor::Ce,
            AttackFlavor::WeightedCe,
            AttackFlavor::Margin,
        ] {
            let c = cfg(flavor).with_alpha(1.0).unwrap();
            let adv = batch_attack(&model, &batch, &c).unwrap();
            for (a, x) in adv.inputs.iter().zip(batch.inputs.iter()) {
                assert!(linf_distance(a, x) <= c.epsilon + 1e-12);
                assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn identical_config_gives_bitwise_identical_output() {
        let model = Model::new(&[5, 7, 4], 31).unwrap();
        let x = vec![0.1, 0.9, 0.5, 0.3, 0.7];
        let c = cfg(AttackFlavor::Ce);
        assert_eq!(
            pgd(&model, &x, 3, &c).unwrap(),
            pgd(&model, &x, 3, &c).unwrap()
        );
    }

    #[test]
    fn flavor_mismatch_is_a_config_error() {
        let model = zero_model(2, 2);
        let x = vec![0.5, 0.5];
        assert!(pgd(&model, &x, 0, &cfg(AttackFlavor::Margin)).is_err());
        assert!(weighted_pgd(&model, &x, 0, &cfg(AttackFlavor::Ce)).is_err());
        assert!(margin_pgd(&model, &x, 0, &cfg(AttackFlavor::Ce)).is_err());
    }
}
