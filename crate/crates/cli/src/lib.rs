//! Configuration and result files for the `bve` command.

pub mod config;
pub mod error;
pub mod output;

pub use config::Settings;
pub use error::{CliError, ConfigError};

/// Exit status when a run left the camera stuck on an unreachable pose.
pub const EXIT_INFEASIBLE: u8 = 3;
