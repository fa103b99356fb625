//! Standard-library side of the simulator: parallel execution, config
//! files, metrics output, task-suite files and the command implementations
//! behind the `fedsim` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod parallel;
pub mod suite_file;

pub use error::{IoError, IoResult};
pub use parallel::RayonExecutor;
