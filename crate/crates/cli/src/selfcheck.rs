//! The `selfcheck` command: runs the independent oracle suites and prints
//! one line per check.

use advrisk::attack::{batch_attack, pgd, weighted_pgd, AttackConfig, AttackFlavor};
use advrisk::check::{
    dro_oracle_enumerate, finite_diff_input_check, finite_diff_param_check,
    finite_diff_trades_check, within_ball_and_box, GradCheck,
};
use advrisk::data::synth_gaussians;
use advrisk::dro::solve_dro_weights;
use advrisk::eval::weighted_accuracy;
use advrisk::nn::{model_to_bytes, Batch, LossSpec, Model};
use advrisk::rng::{mix_seed, rng_from};
use advrisk::training::{minibatch_unbiasedness_check, train, Regime, TrainConfig};
use rand::Rng;

type CheckResult = Result<String, String>;

fn random_net_and_batch(seed: u64) -> (Model, Batch) {
    let mut rng = rng_from(seed);
    let dims = [
        rng.gen_range(2..=6),
        rng.gen_range(2..=6),
        rng.gen_range(2..=5),
    ];
    let model = Model::new(&dims, mix_seed(seed, 1)).unwrap();
    let m = rng.gen_range(1..=4);
    let inputs = (0..m)
        .map(|_| (0..dims[0]).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let labels = (0..m).map(|_| rng.gen_range(0..dims[2])).collect();
    (model, Batch::new(inputs, labels).unwrap())
}

fn assert_grad(check: GradCheck, what: &str) -> Result<(), String> {
    if check.max_rel_err < 1e-4 {
        Ok(())
    } else {
        Err(format!(
            "{what}: relative error {} exceeds 1e-4",
            check.max_rel_err
        ))
    }
}

fn gradient_oracle() -> CheckResult {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let (model, batch) = random_net_and_batch(seed);
        let weights: Vec<f64> = (0..batch.len()).map(|i| 0.5 + i as f64 * 0.3).collect();
        let c = finite_diff_param_check(&model, &batch, &LossSpec::CrossEntropy, &weights, 1e-5)
            .map_err(|e| e.to_string())?;
        assert_grad(c, "parameter gradient")?;
        worst = worst.max(c.max_rel_err);
        let c = finite_diff_input_check(
            &model,
            &batch.inputs[0],
            batch.labels[0],
            &LossSpec::CrossEntropy,
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        assert_grad(c, "input gradient")?;
        worst = worst.max(c.max_rel_err);
    }
    Ok(format!(
        "gradients match finite differences (worst rel err {worst:.2e})"
    ))
}

fn trades_gradient_oracle() -> CheckResult {
    let (model, batch) = random_net_and_batch(31);
    let mut rng = rng_from(32);
    let adv_inputs: Vec<Vec<f64>> = batch
        .inputs
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let adv = Batch::new(adv_inputs, batch.labels.clone()).unwrap();
    let weights = vec![1.0; batch.len()];
    let c = finite_diff_trades_check(&model, &batch, &adv, 6.0, &weights, 1e-5)
        .map_err(|e| e.to_string())?;
    assert_grad(c, "trades gradient")?;
    Ok(format!(
        "trades gradient matches finite differences (rel err {:.2e})",
        c.max_rel_err
    ))
}

fn attack_feasibility() -> CheckResult {
    let model = Model::new(&[4, 6, 3], 9).unwrap();
    let mut rng = rng_from(10);
    for flavor in [
        AttackFlavor::Ce,
        AttackFlavor::WeightedCe,
        AttackFlavor::Margin,
    ] {
        for epsilon in [0.1, 0.3] {
            for steps in [1usize, 10, 40] {
                let cfg = AttackConfig::new(epsilon, 0.01, steps, flavor, 2)
                    .unwrap()
                    .with_alpha(1.0)
                    .unwrap();
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                let adv = match flavor {
                    AttackFlavor::Ce => pgd(&model, &x, 1, &cfg),
                    AttackFlavor::WeightedCe => weighted_pgd(&model, &x, 1, &cfg),
                    AttackFlavor::Margin => margin_attack(&model, &x, 1, &cfg),
                }
                .map_err(|e| e.to_string())?;
                if !within_ball_and_box(&x, &adv, epsilon, 1e-12) {
                    return Err(format!(
                        "{flavor:?} eps={epsilon} K={steps} left the feasible set"
                    ));
                }
            }
        }
    }
    Ok("all attack flavors stay inside the ball and box".into())
}

fn margin_attack(
    model: &Model,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> advrisk::Result<Vec<f64>> {
    advrisk::attack::margin_pgd(model, x, label, cfg)
}

fn weighted_attack_collapse() -> CheckResult {
    for seed in 0..3u64 {
        let model = Model::new(&[3, 5, 2], mix_seed(seed, 4)).unwrap();
        let mut rng = rng_from(mix_seed(seed, 5));
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ce = AttackConfig::new(0.1, 0.02, 5, AttackFlavor::Ce, seed).unwrap();
        let w = AttackConfig::new(0.1, 0.02, 5, AttackFlavor::WeightedCe, seed).unwrap();
        let a = pgd(&model, &x, 0, &ce).map_err(|e| e.to_string())?;
        let b = weighted_pgd(&model, &x, 0, &w).map_err(|e| e.to_string())?;
        if a.iter()
            .map(|v| v.to_bits())
            .ne(b.iter().map(|v| v.to_bits()))
        {
            return Err(format!(
                "weighted attack diverged from plain attack at seed {seed}"
            ));
        }
    }
    Ok("weighted attack at alpha 0 is bitwise identical to the plain attack".into())
}

fn dro_solver_vs_oracle() -> CheckResult {
    let mut rng = rng_from(77);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=10);
        let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..5.0)).collect();
        let rho = rng.gen_range(0.0..3.0);
        let sol = solve_dro_weights(&losses, rho).map_err(|e| e.to_string())?;
        let oracle = dro_oracle_enumerate(&losses, rho);
        let gap = (sol.objective - oracle).abs();
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!(
                "solver {} vs oracle {oracle} (gap {gap:.2e})",
                sol.objective
            ));
        }
    }
    let endpoints = solve_dro_weights(&[1.0, 2.0, 4.0], 0.0).map_err(|e| e.to_string())?;
    if (endpoints.objective - 7.0 / 3.0).abs() > 1e-12 {
        return Err("zero budget did not return the mean loss".into());
    }
    let saturated = solve_dro_weights(&[1.0, 2.0, 4.0], 10.0).map_err(|e| e.to_string())?;
    if saturated.objective != 4.0 {
        return Err("saturated budget did not return the max loss".into());
    }
    Ok(format!(
        "dro solver matches the enumeration oracle (worst gap {worst:.2e})"
    ))
}

fn weighted_accuracy_inequality() -> CheckResult {
    let mut rng = rng_from(55);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let margins: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let correct: Vec<bool> = margins.iter().map(|m| *m > 0.0).collect();
        let alpha = rng.gen_range(0.0..4.0);
        let (a_sa, _) = weighted_accuracy(&margins, &correct, alpha).map_err(|e| e.to_string())?;
        let a_rob = correct.iter().filter(|&&c| c).count() as f64 / n as f64;
        if a_sa > a_rob + 1e-12 {
            return Err(format!(
                "weighted accuracy {a_sa} exceeded plain accuracy {a_rob}"
            ));
        }
    }
    Ok("weighted accuracy never exceeds robust accuracy on 1000 random margin sets".into())
}

fn minibatch_unbiasedness() -> CheckResult {
    let data = synth_gaussians(24, &[vec![0.3, 0.35], vec![0.7, 0.65]], 0.12, 5).unwrap();
    let model = Model::new(&[2, 6, 2], 19).unwrap();
    let attack = AttackConfig::new(0.1, 0.02, 3, AttackFlavor::WeightedCe, 23)
        .unwrap()
        .with_alpha(1.0)
        .unwrap();
    let report = minibatch_unbiasedness_check(&model, &data, 1.0, &attack, 200, 8)
        .map_err(|e| e.to_string())?;
    if report.z_score.abs() >= 5.0 {
        return Err(format!("z-score {} out of range", report.z_score));
    }
    Ok(format!(
        "mini-batch loss is unbiased (z = {:+.2})",
        report.z_score
    ))
}

fn end_to_end_determinism() -> CheckResult {
    let data = synth_gaussians(12, &[vec![0.3, 0.3], vec![0.7, 0.7]], 0.06, 8).unwrap();
    let model = Model::new(&[2, 5, 2], 3).unwrap();
    let cfg = TrainConfig {
        regime: Regime::WeightedAt,
        epochs: 1,
        batch_size: 6,
        lr: 0.5,
        attack: Some(AttackConfig::new(0.1, 0.02, 3, AttackFlavor::Ce, 6).unwrap()),
        alpha_train: Some(0.5),
        lambda_inv: None,
        combine_lambda: None,
        seed: 2,
    };
    let (a, _) = train(&model, &data, &cfg).map_err(|e| e.to_string())?;
    let (b, _) = train(&model, &data, &cfg).map_err(|e| e.to_string())?;
    if model_to_bytes(&a) != model_to_bytes(&b) {
        return Err("training reruns disagreed".into());
    }
    let batch = data.full_batch();
    let atk = AttackConfig::new(0.1, 0.02, 4, AttackFlavor::Ce, 9).unwrap();
    let x = batch_attack(&a, &batch, &atk).map_err(|e| e.to_string())?;
    let y = batch_attack(&a, &batch, &atk).map_err(|e| e.to_string())?;
    if x.inputs != y.inputs {
        return Err("batch attack reruns disagreed".into());
    }
    Ok("training and attacks reproduce bitwise across reruns".into())
}

type NamedCheck = (&'static str, fn() -> CheckResult);

/// Runs every oracle suite, printing one line per check. Returns the number
/// of failures.
pub fn run_selfcheck() -> usize {
    let checks: Vec<NamedCheck> = vec![
        ("gradient-oracle", gradient_oracle),
        ("trades-gradient-oracle", trades_gradient_oracle),
        ("attack-feasibility", attack_feasibility),
        ("weighted-attack-collapse", weighted_attack_collapse),
        ("dro-solver-vs-oracle", dro_solver_vs_oracle),
        ("weighted-accuracy-inequality", weighted_accuracy_inequality),
        ("minibatch-unbiasedness", minibatch_unbiasedness),
        ("determinism", end_to_end_determinism),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(msg) => println!("ok   {name}: {msg}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    failures
}
