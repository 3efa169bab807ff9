use advrisk_cli::{cmd_dro, cmd_evaluate, cmd_sweep, cmd_train, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Margin-weighted adversarial training harness.
///
/// Exit codes: 0 success, 1 configuration error, 2 runtime error.
#[derive(Parser)]
#[command(name = "advrisk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.bin plus trainlog.csv.
    Train {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained model: metrics JSON, per-example CSV, and weight
    /// histogram CSV per configured alpha.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the chi-squared budget grid into dro_curve.csv.
    Dro {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every (alpha_train, alpha_eval, epsilon) cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle suites and report one line per check.
    Selfcheck,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outputs = cmd_train(&cfg, out.as_deref())?;
            println!("wrote {}", outputs.model_path.display());
            println!("wrote {}", outputs.log_path.display());
        }
        Command::Evaluate { config, model, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outputs = cmd_evaluate(&cfg, &model, out.as_deref())?;
            for report in &outputs.reports {
                println!(
                    "alpha_eval={}: a_nat={:.4} a_rob={:.4} a_sa={:.4} a_tr={:.4}",
                    report.config.alpha_eval, report.a_nat, report.a_rob, report.a_sa, report.a_tr
                );
            }
            for file in &outputs.files {
                println!("wrote {}", file.display());
            }
        }
        Command::Dro { config, model, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outputs = cmd_dro(&cfg, &model, out.as_deref())?;
            println!(
                "wrote {} ({} budgets)",
                outputs.curve_path.display(),
                outputs.rows.len()
            );
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outputs = cmd_sweep(&cfg, out.as_deref())?;
            println!(
                "wrote {} ({} rows)",
                outputs.csv_path.display(),
                outputs.rows
            );
        }
        Command::Selfcheck => {
            let failures = advrisk_cli::selfcheck::run_selfcheck();
            if failures > 0 {
                return Err(CliError::Runtime(format!("{failures} selfcheck(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
