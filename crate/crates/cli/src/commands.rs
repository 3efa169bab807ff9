//! Command implementations behind the CLI: train, evaluate, dro, sweep.
//!
//! Every command resolves its output directory, archives the resolved
//! configuration next to the outputs, and writes a `run-meta.txt` sidecar.
//! The sidecar is the only file carrying timestamps; everything else is a
//! pure function of the configuration, so reruns reproduce outputs
//! byte-for-byte.

use crate::config::{DroAttack, ExperimentConfig};
use crate::error::{CliError, CliResult};
use advrisk::attack::{AttackConfig, AttackFlavor};
use advrisk::data::Dataset;
use advrisk::dro::{dro_curve, write_curve_csv};
use advrisk::eval::{
    attack_points, evaluate, weighted_accuracy, AdvPoints, EvalEcho, EvalReport, EvalSeeds,
    McEstimate,
};
use advrisk::nn::{load_model, save_model, Model};
use advrisk::rng::mix_seed;
use advrisk::training::{train, TrainLog};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Archives the resolved config and writes the timestamped sidecar.
fn archive_run(cfg: &ExperimentConfig, out: &Path, command: &str) -> CliResult<()> {
    write_text(&out.join("resolved-config.toml"), &cfg.to_toml())?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_text(
        &out.join("run-meta.txt"),
        &format!("command = {command}\nunix_time = {stamp}\n"),
    )
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub model: Model,
    pub log: TrainLog,
}

/// Trains per the `[train]` section and writes `model.bin` plus
/// `trainlog.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out_override: Option<&Path>) -> CliResult<TrainOutputs> {
    let out = cfg.out_dir(out_override);
    ensure_dir(&out)?;
    archive_run(cfg, &out, "train")?;

    let data = cfg.load_train_data()?;
    let model = Model::new(&cfg.model_dims(&data), cfg.model.seed)?;
    let (trained, log) = train(&model, &data, &cfg.train_config())?;

    let model_path = out.join("model.bin");
    save_model(&trained, &model_path)?;
    let log_path = out.join("trainlog.csv");
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    fs::write(&log_path, buf)?;
    Ok(TrainOutputs {
        model_path,
        log_path,
        model: trained,
        log,
    })
}

#[derive(Debug, Serialize)]
struct NatRobReport {
    a_nat: f64,
    a_rob: f64,
    epsilon: f64,
    steps: usize,
    seed_sa: u64,
}

/// JSON payload per `alpha_eval`: the metrics and the configuration echo;
/// per-example arrays go to the CSV next to it.
#[derive(Debug, Serialize)]
struct ReportJson {
    a_nat: f64,
    a_rob: f64,
    a_sa: f64,
    a_tr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_sampled: Option<McEstimate>,
    config: EvalEcho,
}

fn write_examples_csv(report: &EvalReport, path: &Path) -> CliResult<()> {
    let p = &report.per_example;
    let mut out = String::new();
    out.push_str("index,margin,weight,normalized_weight,ind_rob,ind_sa,ind_tr,adv_loss\n");
    for i in 0..p.margin.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i,
            p.margin[i],
            p.raw_weight[i],
            p.normalized_weight[i],
            u8::from(p.indicator_rob[i]),
            u8::from(p.indicator_sa[i]),
            u8::from(p.indicator_tr[i]),
            p.adv_loss[i]
        ));
    }
    write_text(path, &out)
}

fn write_histogram_csv(report: &EvalReport, bins: usize, path: &Path) -> CliResult<()> {
    let hist = report.weight_histogram(bins)?;
    let mut out = String::new();
    out.push_str("bin_lo,bin_hi,count\n");
    for (i, count) in hist.counts.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            hist.edges[i],
            hist.edges[i + 1],
            count
        ));
    }
    write_text(path, &out)
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

/// Formats an alpha for a file name: `0.5` -> `0.5`, `2.0` -> `2`.
fn alpha_tag(alpha: f64) -> String {
    if alpha == alpha.trunc() {
        format!("{}", alpha as i64)
    } else {
        format!("{alpha}")
    }
}

#[derive(Debug)]
pub struct EvalOutputs {
    pub reports: Vec<EvalReport>,
    pub files: Vec<PathBuf>,
}

/// Evaluates a trained model: one report (JSON + per-example CSV + weight
/// histogram CSV) per configured `alpha_eval`; with an empty alpha list only
/// clean and robust accuracy are computed.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    model_path: &Path,
    out_override: Option<&Path>,
) -> CliResult<EvalOutputs> {
    let out = cfg.out_dir(out_override);
    ensure_dir(&out)?;
    archive_run(cfg, &out, "evaluate")?;

    let model = load_model(model_path)?;
    let testset = cfg.load_test_data()?;
    check_shapes(&model, &testset)?;
    let attack = cfg.eval_attack();
    let seeds = EvalSeeds::derive(cfg.eval.seed);
    let mut outputs = EvalOutputs {
        reports: Vec::new(),
        files: Vec::new(),
    };

    if cfg.eval.alpha_eval.is_empty() {
        let a_nat = advrisk::eval::eval_natural(&model, &testset)?;
        let points = attack_points(&model, &testset, &attack, seeds.sa)?;
        let payload = NatRobReport {
            a_nat,
            a_rob: points.accuracy(),
            epsilon: attack.epsilon,
            steps: attack.steps,
            seed_sa: seeds.sa,
        };
        let path = out.join("eval_natrob.json");
        write_text(&path, &to_json_pretty(&payload))?;
        outputs.files.push(path);
        return Ok(outputs);
    }

    for &alpha in &cfg.eval.alpha_eval {
        let report = evaluate(&model, &testset, &attack, alpha, seeds)?;
        let mc_sampled = if cfg.eval.mc_draws > 0 {
            Some(report.mc_sampled_accuracy(cfg.eval.mc_draws, mix_seed(cfg.eval.seed, 3))?)
        } else {
            None
        };
        let tag = alpha_tag(alpha);
        let json_path = out.join(format!("eval_alpha{tag}.json"));
        write_text(
            &json_path,
            &to_json_pretty(&ReportJson {
                a_nat: report.a_nat,
                a_rob: report.a_rob,
                a_sa: report.a_sa,
                a_tr: report.a_tr,
                mc_sampled,
                config: report.config,
            }),
        )?;
        let csv_path = out.join(format!("eval_alpha{tag}_examples.csv"));
        write_examples_csv(&report, &csv_path)?;
        let hist_path = out.join(format!("eval_alpha{tag}_hist.csv"));
        write_histogram_csv(&report, cfg.eval.histogram_bins, &hist_path)?;
        outputs.files.extend([json_path, csv_path, hist_path]);
        outputs.reports.push(report);
    }
    Ok(outputs)
}

fn check_shapes(model: &Model, testset: &Dataset) -> CliResult<()> {
    if model.input_dim() != testset.dim() || model.output_dim() != testset.class_count {
        return Err(CliError::Runtime(format!(
            "model shape {}x{} does not match dataset {}x{}",
            model.input_dim(),
            model.output_dim(),
            testset.dim(),
            testset.class_count
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub struct DroOutputs {
    pub curve_path: PathBuf,
    pub rows: Vec<advrisk::dro::DroCurveRow>,
}

/// Computes per-example adversarial losses under the configured attack and
/// sweeps the chi-squared budget grid into `dro_curve.csv`.
pub fn cmd_dro(
    cfg: &ExperimentConfig,
    model_path: &Path,
    out_override: Option<&Path>,
) -> CliResult<DroOutputs> {
    let out = cfg.out_dir(out_override);
    ensure_dir(&out)?;
    archive_run(cfg, &out, "dro")?;

    let model = load_model(model_path)?;
    let testset = cfg.load_test_data()?;
    check_shapes(&model, &testset)?;
    let mut attack = cfg.eval_attack();
    if cfg.dro.attack == DroAttack::Margin {
        attack.flavor = AttackFlavor::Margin;
    }
    let points = attack_points(
        &model,
        &testset,
        &attack,
        EvalSeeds::derive(cfg.eval.seed).sa,
    )?;
    let losses = match cfg.dro.attack {
        DroAttack::Ce => &points.ce_losses,
        DroAttack::Margin => &points.margin_losses,
    };
    let rows = dro_curve(losses, &points.correct, &cfg.dro.rho_grid)?;
    let curve_path = out.join("dro_curve.csv");
    let mut buf = Vec::new();
    write_curve_csv(&rows, &mut buf)?;
    fs::write(&curve_path, buf)?;
    Ok(DroOutputs { curve_path, rows })
}

/// Cache key: the training-relevant subset of the configuration.
#[derive(Serialize)]
struct TrainKey<'a> {
    data: &'a crate::config::DataSection,
    model: &'a crate::config::ModelSection,
    train: &'a crate::config::TrainSection,
    attack: &'a crate::config::AttackSection,
}

fn train_cache_key(cfg: &ExperimentConfig) -> String {
    let key = TrainKey {
        data: &cfg.data,
        model: &cfg.model,
        train: &cfg.train,
        attack: &cfg.attack,
    };
    let canonical = toml::to_string(&key).expect("key serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

fn train_cached(cfg: &ExperimentConfig, cache_dir: &Path) -> CliResult<Model> {
    ensure_dir(cache_dir)?;
    let path = cache_dir.join(format!("model-{}.bin", train_cache_key(cfg)));
    if path.exists() {
        return Ok(load_model(&path)?);
    }
    let data = cfg.load_train_data()?;
    let model = Model::new(&cfg.model_dims(&data), cfg.model.seed)?;
    let (trained, _) = train(&model, &data, &cfg.train_config())?;
    // atomic publish so concurrent cells cannot observe a partial file
    let tmp = cache_dir.join(format!(
        "model-{}.bin.tmp-{}",
        train_cache_key(cfg),
        std::process::id()
    ));
    save_model(&trained, &tmp)?;
    fs::rename(&tmp, &path)?;
    Ok(trained)
}

#[derive(Debug)]
pub struct SweepOutputs {
    pub csv_path: PathBuf,
    pub rows: usize,
}

/// Trains and evaluates every `(alpha_train, alpha_eval, epsilon)` cell.
/// Models are cached by a hash of the training-relevant configuration, so
/// cells sharing `alpha_train` reuse one trained model. Cell failures are
/// recorded in the `status` column and the sweep continues.
pub fn cmd_sweep(cfg: &ExperimentConfig, out_override: Option<&Path>) -> CliResult<SweepOutputs> {
    if cfg.sweep.alpha_train.is_empty()
        || cfg.sweep.alpha_eval.is_empty()
        || cfg.sweep.epsilon.is_empty()
    {
        return Err(CliError::Config("sweep grids must be non-empty".into()));
    }
    if !cfg.train.regime.is_weighted() {
        return Err(CliError::Config(
            "sweeping alpha_train needs a weighted regime (weighted-at or weighted-trades)".into(),
        ));
    }
    let out = cfg.out_dir(out_override);
    ensure_dir(&out)?;
    archive_run(cfg, &out, "sweep")?;
    let cache_dir = out.join("cache");

    let testset = cfg.load_test_data()?;
    let seeds = EvalSeeds::derive(cfg.eval.seed);
    let mut csv = String::from("alpha_train,alpha_eval,epsilon,a_nat,a_rob,a_sa,a_tr,status\n");
    let mut rows = 0usize;

    for &alpha_train in &cfg.sweep.alpha_train {
        let mut cell_cfg = cfg.clone();
        cell_cfg.train.alpha_train = Some(alpha_train);
        let model = match train_cached(&cell_cfg, &cache_dir) {
            Ok(m) => m,
            Err(e) => {
                for &alpha_eval in &cfg.sweep.alpha_eval {
                    for &epsilon in &cfg.sweep.epsilon {
                        csv.push_str(&format!(
                            "{alpha_train},{alpha_eval},{epsilon},,,,,error: {e}\n"
                        ));
                        rows += 1;
                    }
                }
                continue;
            }
        };
        let a_nat = advrisk::eval::eval_natural(&model, &testset)?;
        for &epsilon in &cfg.sweep.epsilon {
            let mut attack = cell_cfg.eval_attack();
            attack.epsilon = epsilon;
            match sweep_points(&model, &testset, &attack, seeds) {
                Ok((sa, tr)) => {
                    let a_rob = sa.accuracy();
                    for &alpha_eval in &cfg.sweep.alpha_eval {
                        let a_sa = weighted_accuracy(&sa.margins, &sa.correct, alpha_eval)?.0;
                        // alpha 0 collapses onto the rob/sa perturbations
                        let tr_points = if alpha_eval == 0.0 { &sa } else { &tr };
                        let a_tr =
                            weighted_accuracy(&tr_points.margins, &tr_points.correct, alpha_eval)?
                                .0;
                        csv.push_str(&format!(
                            "{alpha_train},{alpha_eval},{epsilon},{a_nat},{a_rob},{a_sa},{a_tr},ok\n"
                        ));
                        rows += 1;
                    }
                }
                Err(e) => {
                    for &alpha_eval in &cfg.sweep.alpha_eval {
                        csv.push_str(&format!(
                            "{alpha_train},{alpha_eval},{epsilon},,,,,error: {e}\n"
                        ));
                        rows += 1;
                    }
                }
            }
        }
    }

    let csv_path = out.join("sweep.csv");
    write_text(&csv_path, &csv)?;
    Ok(SweepOutputs { csv_path, rows })
}

/// The two evaluation point sets for one (model, epsilon) cell. The weighted
/// trajectory does not depend on alpha (the weight is a detached positive
/// scalar), so one tr set serves the whole alpha grid.
fn sweep_points(
    model: &Model,
    testset: &Dataset,
    attack: &AttackConfig,
    seeds: EvalSeeds,
) -> CliResult<(AdvPoints, AdvPoints)> {
    let sa = attack_points(model, testset, attack, seeds.sa)?;
    let tr_cfg = AttackConfig {
        flavor: AttackFlavor::WeightedCe,
        alpha: 1.0,
        ..*attack
    };
    let tr = attack_points(model, testset, &tr_cfg, seeds.tr)?;
    Ok((sa, tr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_tags_are_filename_friendly() {
        assert_eq!(alpha_tag(0.5), "0.5");
        assert_eq!(alpha_tag(2.0), "2");
        assert_eq!(alpha_tag(1.25), "1.25");
    }

    #[test]
    fn cache_key_tracks_training_fields_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.eval.histogram_bins = 99;
        assert_eq!(train_cache_key(&a), train_cache_key(&b));
        b.train.lr *= 2.0;
        assert_ne!(train_cache_key(&a), train_cache_key(&b));
    }
}
