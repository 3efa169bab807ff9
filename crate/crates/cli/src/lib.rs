//! Library surface of the experiment harness; the `advrisk` binary is a thin
//! dispatcher over these functions so tests can drive commands directly.

pub mod commands;
pub mod config;
pub mod error;
pub mod selfcheck;

pub use commands::{cmd_dro, cmd_evaluate, cmd_sweep, cmd_train};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
