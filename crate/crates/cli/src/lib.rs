//! Command-line front end: layered key-value configuration, single runs and
//! hyperparameter sweeps.

pub mod app;
pub mod error;
pub mod settings;
pub mod sweep;

pub use app::{command, execute, run};
pub use error::{CliError, CliResult};
pub use settings::{Resolved, Settings, KEYS};
pub use sweep::{run_sweep, SweepSpec};
