//! Attack-aware evaluation metrics.
//!
//! Four accuracies are reported:
//!
//! - `a_nat` — clean accuracy;
//! - `a_rob` — accuracy at unweighted-PGD points, uniformly averaged;
//! - `a_sa`  — weighted accuracy at the *same* unweighted-PGD points, with
//!   attack-sampling probabilities `exp(-alpha_eval * margin)` normalized over
//!   the test set (an adversary that samples vulnerable examples more often);
//! - `a_tr`  — the same weighted accuracy at weighted-PGD points generated
//!   with an independent seed stream.
//!
//! `a_rob` and `a_sa` deliberately share one perturbation set: the weight is
//! nonincreasing and the correctness indicator nondecreasing in the margin,
//! so `a_sa <= a_rob` holds exactly, not just in expectation.

use crate::attack::{run_pgd, AttackConfig, AttackFlavor, PgdLoss};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{loss_and_logit_grad, softmax_row, LossKind, Model};
use crate::parallel::map_indexed;
use crate::rng::{mix_seed, rng_from};
use crate::weighting::{
    importance_weight, is_correct, margin, normalize, WeightConfig, WeightVector,
};
use rand::distributions::{Distribution, WeightedIndex};
use serde::Serialize;

/// Seeds for the two evaluation-time perturbation sets. Derived seeds keep
/// the metrics statistically independent; coupled seeds make the
/// `alpha_eval = 0` collapse `a_sa == a_rob == a_tr` exact.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalSeeds {
    pub sa: u64,
    pub tr: u64,
}

impl EvalSeeds {
    pub fn derive(seed: u64) -> EvalSeeds {
        EvalSeeds {
            sa: mix_seed(seed, 1),
            tr: mix_seed(seed, 2),
        }
    }

    pub fn coupled(seed: u64) -> EvalSeeds {
        let s = mix_seed(seed, 1);
        EvalSeeds { sa: s, tr: s }
    }
}

/// Per-example measurements at one set of adversarial points.
#[derive(Debug, Clone)]
pub struct AdvPoints {
    pub inputs: Vec<Vec<f64>>,
    pub margins: Vec<f64>,
    pub correct: Vec<bool>,
    pub ce_losses: Vec<f64>,
    pub margin_losses: Vec<f64>,
}

impl AdvPoints {
    pub fn len(&self) -> usize {
        self.margins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.margins.is_empty()
    }

    /// Fraction of examples still classified correctly.
    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64
    }
}

fn check_model_data(model: &Model, testset: &Dataset) -> Result<()> {
    if model.input_dim() != testset.dim() {
        return Err(Error::Config(format!(
            "model input width {} does not match data dimension {}",
            model.input_dim(),
            testset.dim()
        )));
    }
    if model.output_dim() != testset.class_count {
        return Err(Error::Config(format!(
            "model emits {} classes but data declares {}",
            model.output_dim(),
            testset.class_count
        )));
    }
    if model.output_dim() < 2 {
        return Err(Error::Config(
            "evaluation needs at least two classes".into(),
        ));
    }
    Ok(())
}

/// Attacks every test example with the configured flavor, deriving the
/// per-example seed as `mix_seed(seed_base, index)`, and measures margins,
/// indicators, and losses at the perturbed points.
pub fn attack_points(
    model: &Model,
    testset: &Dataset,
    cfg: &AttackConfig,
    seed_base: u64,
) -> Result<AdvPoints> {
    check_model_data(model, testset)?;
    cfg.validate()?;
    let loss = match cfg.flavor {
        AttackFlavor::Ce => PgdLoss::Ce,
        AttackFlavor::WeightedCe => PgdLoss::WeightedCe { alpha: cfg.alpha },
        AttackFlavor::Margin => PgdLoss::Margin,
    };
    struct Row {
        input: Vec<f64>,
        margin: f64,
        correct: bool,
        ce: f64,
        margin_loss: f64,
    }
    let rows: Vec<Row> = map_indexed(testset.len(), |i| {
        let y = testset.labels[i];
        let adv = run_pgd(
            model,
            &testset.features[i],
            y,
            loss,
            cfg,
            mix_seed(seed_base, i as u64),
            None,
        );
        let trace = model.trace(&adv);
        let logits = trace.logits();
        let probs = softmax_row(logits);
        let mrg = margin(&probs, y).expect("class count checked");
        Row {
            margin: mrg,
            correct: is_correct(&probs, y),
            ce: loss_and_logit_grad(logits, y, LossKind::Ce).0,
            margin_loss: loss_and_logit_grad(logits, y, LossKind::Margin).0,
            input: adv,
        }
    });
    let mut points = AdvPoints {
        inputs: Vec::with_capacity(rows.len()),
        margins: Vec::with_capacity(rows.len()),
        correct: Vec::with_capacity(rows.len()),
        ce_losses: Vec::with_capacity(rows.len()),
        margin_losses: Vec::with_capacity(rows.len()),
    };
    for r in rows {
        points.inputs.push(r.input);
        points.margins.push(r.margin);
        points.correct.push(r.correct);
        points.ce_losses.push(r.ce);
        points.margin_losses.push(r.margin_loss);
    }
    Ok(points)
}

/// Weighted accuracy under attack-sampling probabilities
/// `exp(-alpha * margin) / sum`: the sum of normalized weights over the
/// correctly classified examples.
pub fn weighted_accuracy(
    margins: &[f64],
    correct: &[bool],
    alpha: f64,
) -> Result<(f64, WeightVector)> {
    if margins.len() != correct.len() || margins.is_empty() {
        return Err(Error::Domain(
            "margins and indicators must be non-empty and equal length".into(),
        ));
    }
    let wc = WeightConfig::new(alpha)?;
    let raw: Vec<f64> = margins.iter().map(|m| importance_weight(*m, &wc)).collect();
    let weights = normalize(&raw)?;
    // single division keeps the alpha = 0 case exactly equal to the plain
    // count ratio (all raw weights are exactly 1 there)
    let hit: f64 = raw
        .iter()
        .zip(correct.iter())
        .map(|(w, &c)| if c { *w } else { 0.0 })
        .sum();
    let total: f64 = raw.iter().sum();
    Ok(((hit / total).min(1.0), weights))
}

/// Fraction of clean test examples classified correctly.
pub fn eval_natural(model: &Model, testset: &Dataset) -> Result<f64> {
    check_model_data(model, testset)?;
    if testset.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty test set".into()));
    }
    let correct: Vec<bool> = map_indexed(testset.len(), |i| {
        let probs = softmax_row(&model.trace(&testset.features[i]).into_logits());
        is_correct(&probs, testset.labels[i])
    });
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

fn require_ce(cfg: &AttackConfig, what: &str) -> Result<()> {
    if cfg.flavor != AttackFlavor::Ce {
        return Err(Error::Config(format!(
            "{what} uses the unweighted ce attack flavor"
        )));
    }
    Ok(())
}

/// Robust accuracy: uniform average of correctness at unweighted-PGD points.
pub fn eval_robust(model: &Model, testset: &Dataset, attack_cfg: &AttackConfig) -> Result<f64> {
    require_ce(attack_cfg, "eval_robust")?;
    let points = attack_points(
        model,
        testset,
        attack_cfg,
        EvalSeeds::derive(attack_cfg.seed).sa,
    )?;
    Ok(points.accuracy())
}

/// Weighted accuracy at the same unweighted-PGD points as [`eval_robust`].
pub fn eval_sa(
    model: &Model,
    testset: &Dataset,
    attack_cfg: &AttackConfig,
    alpha_eval: f64,
) -> Result<f64> {
    require_ce(attack_cfg, "eval_sa")?;
    let points = attack_points(
        model,
        testset,
        attack_cfg,
        EvalSeeds::derive(attack_cfg.seed).sa,
    )?;
    Ok(weighted_accuracy(&points.margins, &points.correct, alpha_eval)?.0)
}

fn tr_attack_cfg(attack_cfg: &AttackConfig, alpha_eval: f64) -> AttackConfig {
    AttackConfig {
        flavor: AttackFlavor::WeightedCe,
        alpha: alpha_eval,
        ..*attack_cfg
    }
}

/// Weighted accuracy at weighted-PGD points generated on an independent
/// seed stream. At `alpha_eval = 0` the weighted attack collapses to the
/// plain one, so the metric reuses the rob/sa perturbation stream and equals
/// [`eval_robust`] exactly.
pub fn eval_tr(
    model: &Model,
    testset: &Dataset,
    attack_cfg: &AttackConfig,
    alpha_eval: f64,
) -> Result<f64> {
    require_ce(attack_cfg, "eval_tr")?;
    let cfg = tr_attack_cfg(attack_cfg, alpha_eval);
    let seeds = EvalSeeds::derive(attack_cfg.seed);
    let seed = if alpha_eval == 0.0 {
        seeds.sa
    } else {
        seeds.tr
    };
    let points = attack_points(model, testset, &cfg, seed)?;
    Ok(weighted_accuracy(&points.margins, &points.correct, alpha_eval)?.0)
}

/// Per-example arrays backing an [`EvalReport`]. The margin, weight, and
/// adversarial-loss columns are measured at the shared rob/sa perturbation
/// points; `indicator_tr` comes from the independent tr points.
#[derive(Debug, Clone, Serialize)]
pub struct PerExampleRecords {
    pub margin: Vec<f64>,
    pub raw_weight: Vec<f64>,
    pub normalized_weight: Vec<f64>,
    pub indicator_rob: Vec<bool>,
    pub indicator_sa: Vec<bool>,
    pub indicator_tr: Vec<bool>,
    pub adv_loss: Vec<f64>,
}

/// Echo of the evaluation settings, for reproducibility.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalEcho {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub alpha_eval: f64,
    pub seed_sa: u64,
    pub seed_tr: u64,
}

/// The four metrics plus per-example measurements for one `alpha_eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub a_nat: f64,
    pub a_rob: f64,
    pub a_sa: f64,
    pub a_tr: f64,
    pub per_example: PerExampleRecords,
    pub config: EvalEcho,
}

/// Full evaluation at one kernel strength. `attack_cfg` must use the ce
/// flavor; the tr metric internally switches to the weighted flavor at
/// `alpha_eval`.
pub fn evaluate(
    model: &Model,
    testset: &Dataset,
    attack_cfg: &AttackConfig,
    alpha_eval: f64,
    seeds: EvalSeeds,
) -> Result<EvalReport> {
    require_ce(attack_cfg, "evaluate")?;
    let a_nat = eval_natural(model, testset)?;
    let sa_points = attack_points(model, testset, attack_cfg, seeds.sa)?;
    let a_rob = sa_points.accuracy();
    let (a_sa, weights) = weighted_accuracy(&sa_points.margins, &sa_points.correct, alpha_eval)?;

    // at alpha 0 the weighted attack collapses onto the plain one, so the tr
    // metric shares the rob/sa stream and all three coincide exactly
    let tr_seed = if alpha_eval == 0.0 {
        seeds.sa
    } else {
        seeds.tr
    };
    let tr_points = attack_points(
        model,
        testset,
        &tr_attack_cfg(attack_cfg, alpha_eval),
        tr_seed,
    )?;
    let (a_tr, _) = weighted_accuracy(&tr_points.margins, &tr_points.correct, alpha_eval)?;

    debug_assert!(a_sa <= a_rob + 1e-12, "sa {a_sa} exceeds rob {a_rob}");
    Ok(EvalReport {
        a_nat,
        a_rob,
        a_sa,
        a_tr,
        per_example: PerExampleRecords {
            margin: sa_points.margins,
            raw_weight: weights.raw,
            normalized_weight: weights.normalized,
            indicator_rob: sa_points.correct.clone(),
            indicator_sa: sa_points.correct,
            indicator_tr: tr_points.correct,
            adv_loss: sa_points.ce_losses,
        },
        config: EvalEcho {
            epsilon: attack_cfg.epsilon,
            steps: attack_cfg.steps,
            step_size: attack_cfg.step_size,
            alpha_eval,
            seed_sa: seeds.sa,
            seed_tr: seeds.tr,
        },
    })
}

/// Monte-Carlo estimate of a weighted accuracy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Binomial standard error `sqrt(p (1 - p) / draws)`.
    pub stderr: f64,
}

/// Samples example indices i.i.d. from the categorical distribution given by
/// the normalized weights and averages the indicators. The expectation equals
/// the exact weighted accuracy.
pub fn mc_sampled_accuracy(
    normalized_weights: &[f64],
    indicators: &[bool],
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if normalized_weights.len() != indicators.len() || normalized_weights.is_empty() {
        return Err(Error::Domain(
            "weights and indicators must be non-empty and equal length".into(),
        ));
    }
    if draws == 0 {
        return Err(Error::Domain("need at least one draw".into()));
    }
    let dist = WeightedIndex::new(normalized_weights)
        .map_err(|e| Error::Domain(format!("invalid sampling weights: {e}")))?;
    let mut rng = rng_from(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        if indicators[dist.sample(&mut rng)] {
            hits += 1;
        }
    }
    let estimate = hits as f64 / draws as f64;
    let stderr = (estimate * (1.0 - estimate) / draws as f64).sqrt();
    Ok(McEstimate { estimate, stderr })
}

/// Uniform-bin histogram over `[min, max]` of the values.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    /// Counts per bin; they sum to the number of values.
    pub counts: Vec<usize>,
}

/// Histogram of normalized evaluation weights. With all values equal, every
/// count lands in the first bin.
pub fn weight_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Domain("cannot histogram an empty vector".into()));
    }
    if bins == 0 {
        return Err(Error::Domain("need at least one bin".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let mut counts = vec![0usize; bins];
    let width = hi - lo;
    for v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

impl EvalReport {
    /// Monte-Carlo estimate of `a_sa` from the stored weights and indicators.
    pub fn mc_sampled_accuracy(&self, draws: usize, seed: u64) -> Result<McEstimate> {
        mc_sampled_accuracy(
            &self.per_example.normalized_weight,
            &self.per_example.indicator_sa,
            draws,
            seed,
        )
    }

    /// Histogram of the stored normalized weights.
    pub fn weight_histogram(&self, bins: usize) -> Result<Histogram> {
        weight_histogram(&self.per_example.normalized_weight, bins)
    }

    /// Spread (max minus min) of the normalized weights.
    pub fn weight_spread(&self) -> f64 {
        let w = &self.per_example.normalized_weight;
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}
