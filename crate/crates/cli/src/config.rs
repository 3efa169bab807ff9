//! Experiment configuration: one plain-text TOML file, sections per
//! subsystem, every field defaulted. Unknown keys are rejected so a typo
//! fails the run before any computation starts.

use crate::error::{CliError, CliResult};
use advrisk::attack::{AttackConfig, AttackFlavor};
use advrisk::data::{load_csv, load_mnist_idx, subsample, synth_gaussians, Dataset};
use advrisk::training::{Regime, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that re-roots relative output directories.
pub const OUT_ROOT_ENV: &str = "ADVRISK_OUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Mnist,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Which loader to use: `synthetic`, `mnist`, or `csv`.
    pub source: DataSource,
    /// IDX files, for `source = "mnist"`.
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// CSV files (rows `label,f0,f1,...`), for `source = "csv"`.
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    /// Class count for the CSV loader.
    pub class_count: usize,
    /// Synthetic Gaussian blobs, for `source = "synthetic"`.
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_centers: Vec<Vec<f64>>,
    pub synth_sigma: f64,
    /// Post-load uniform subsampling; 0 keeps everything.
    pub train_subsample: usize,
    pub test_subsample: usize,
    /// Seeds synthetic generation and subsampling.
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            train_images: "data/mnist/train-images-idx3-ubyte".into(),
            train_labels: "data/mnist/train-labels-idx1-ubyte".into(),
            test_images: "data/mnist/t10k-images-idx3-ubyte".into(),
            test_labels: "data/mnist/t10k-labels-idx1-ubyte".into(),
            train_csv: "train.csv".into(),
            test_csv: "test.csv".into(),
            class_count: 2,
            synth_train_per_class: 100,
            synth_test_per_class: 50,
            synth_centers: vec![vec![0.25, 0.25], vec![0.75, 0.75]],
            synth_sigma: 0.05,
            train_subsample: 0,
            test_subsample: 0,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    /// Seeds the parameter initialization.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![32],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha_train: Option<f64>,
    pub lambda_inv: Option<f64>,
    pub combine_lambda: Option<f64>,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            regime: Regime::At,
            epochs: 5,
            batch_size: 32,
            lr: 0.5,
            alpha_train: None,
            lambda_inv: None,
            combine_lambda: None,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub init_noise_scale: f64,
    /// Seeds the per-example attack noise during training.
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            epsilon: 0.3,
            step_size: 0.01,
            steps: 10,
            init_noise_scale: 0.001,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// One report per entry; empty list evaluates clean and robust accuracy
    /// only.
    pub alpha_eval: Vec<f64>,
    /// Attack overrides for evaluation; unset fields inherit `[attack]`.
    pub epsilon: Option<f64>,
    pub step_size: Option<f64>,
    pub steps: Option<usize>,
    pub histogram_bins: usize,
    /// Monte-Carlo draws for the sampled-accuracy estimate; 0 skips it.
    pub mc_draws: usize,
    /// Seeds the evaluation perturbation sets.
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            alpha_eval: vec![0.5, 1.0, 1.5, 2.0],
            epsilon: None,
            step_size: None,
            steps: None,
            histogram_bins: 30,
            mc_draws: 0,
            seed: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DroAttack {
    Ce,
    Margin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroSection {
    /// Ascending budget grid.
    pub rho_grid: Vec<f64>,
    /// Loss the attack ascends and the curve reports: `ce` or `margin`.
    pub attack: DroAttack,
}

impl Default for DroSection {
    fn default() -> Self {
        DroSection {
            rho_grid: advrisk::dro::DEFAULT_RHO_GRID.to_vec(),
            attack: DroAttack::Ce,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub alpha_train: Vec<f64>,
    pub alpha_eval: Vec<f64>,
    /// Evaluation-time epsilon grid; training keeps `[attack].epsilon`.
    pub epsilon: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            alpha_train: vec![0.0, 0.5],
            alpha_eval: vec![1.0, 2.0],
            epsilon: vec![0.3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; relative paths resolve under `ADVRISK_OUT_ROOT`
    /// when that variable is set.
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "runs/out".into(),
        }
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub dro: DroSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("cannot parse config {}: {e}", path.display()))
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Output directory after applying the environment override.
    pub fn out_dir(&self, cli_override: Option<&Path>) -> PathBuf {
        let dir = cli_override.unwrap_or(&self.output.dir);
        if dir.is_relative() {
            if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
                return PathBuf::from(root).join(dir);
            }
        }
        dir.to_path_buf()
    }

    /// Base attack settings used during training.
    pub fn train_attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.attack.epsilon,
            step_size: self.attack.step_size,
            steps: self.attack.steps,
            flavor: AttackFlavor::Ce,
            alpha: 0.0,
            init_noise_scale: self.attack.init_noise_scale,
            seed: self.attack.seed,
        }
    }

    /// Attack settings used at evaluation time (`[eval]` overrides applied,
    /// seeded by `[eval].seed`).
    pub fn eval_attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.eval.epsilon.unwrap_or(self.attack.epsilon),
            step_size: self.eval.step_size.unwrap_or(self.attack.step_size),
            steps: self.eval.steps.unwrap_or(self.attack.steps),
            flavor: AttackFlavor::Ce,
            alpha: 0.0,
            init_noise_scale: self.attack.init_noise_scale,
            seed: self.eval.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            regime: self.train.regime,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            attack: Some(self.train_attack()),
            alpha_train: self.train.alpha_train,
            lambda_inv: self.train.lambda_inv,
            combine_lambda: self.train.combine_lambda,
            seed: self.train.seed,
        }
    }

    pub fn load_train_data(&self) -> CliResult<Dataset> {
        let full = self.load_split(true)?;
        self.maybe_subsample(full, self.data.train_subsample, 0)
    }

    pub fn load_test_data(&self) -> CliResult<Dataset> {
        let full = self.load_split(false)?;
        self.maybe_subsample(full, self.data.test_subsample, 1)
    }

    fn load_split(&self, train: bool) -> CliResult<Dataset> {
        let data = match self.data.source {
            DataSource::Synthetic => {
                let per_class = if train {
                    self.data.synth_train_per_class
                } else {
                    self.data.synth_test_per_class
                };
                let seed = advrisk::rng::mix_seed(self.data.seed, if train { 100 } else { 101 });
                synth_gaussians(
                    per_class,
                    &self.data.synth_centers,
                    self.data.synth_sigma,
                    seed,
                )?
            }
            DataSource::Mnist => {
                if train {
                    load_mnist_idx(&self.data.train_images, &self.data.train_labels)?
                } else {
                    load_mnist_idx(&self.data.test_images, &self.data.test_labels)?
                }
            }
            DataSource::Csv => {
                let path = if train {
                    &self.data.train_csv
                } else {
                    &self.data.test_csv
                };
                load_csv(
                    path,
                    self.data.class_count,
                    if train { "train" } else { "test" },
                )?
            }
        };
        Ok(data)
    }

    fn maybe_subsample(&self, data: Dataset, n: usize, stream: u64) -> CliResult<Dataset> {
        if n == 0 || n >= data.len() {
            return Ok(data);
        }
        Ok(subsample(
            &data,
            n,
            advrisk::rng::mix_seed(self.data.seed, 200 + stream),
        )?)
    }

    /// Layer widths for a fresh model on the given data.
    pub fn model_dims(&self, data: &Dataset) -> Vec<usize> {
        let mut dims = vec![data.dim()];
        dims.extend_from_slice(&self.model.hidden);
        dims.push(data.class_count);
        dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_documented_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.attack.epsilon, 0.3);
        assert_eq!(cfg.dro.rho_grid.len(), 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("[train]\nepochz = 3\n");
        assert!(err.is_err());
        let err = toml::from_str::<ExperimentConfig>("[nonsense]\nx = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.to_toml(), text);
    }
}
