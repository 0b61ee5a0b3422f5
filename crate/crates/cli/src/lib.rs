//! The `fiberwatch` pipeline: dataset generation, training, calibration,
//! evaluation and trace monitoring.

pub mod commands;
pub mod config;
pub mod error;
pub mod monitor;

pub use commands::{cmd_calibrate, cmd_eval, cmd_gen, cmd_train_ae, cmd_train_diag};
pub use config::{Context, RunConfig};
pub use error::{CliError, CliResult, ExitKind};
pub use monitor::{cmd_monitor, AlertRecord};
