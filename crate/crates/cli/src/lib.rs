//! Config-driven experiment pipelines over the `pathagg` library.

pub mod config;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::Run;

use pathagg::{Error, ErrorKind};

/// Process exit code for a failed command: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}
