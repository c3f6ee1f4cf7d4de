//! Declarative experiment harness around the loclab library: TOML specs
//! describing a parameter grid and realization count, a deterministic
//! parallel runner with crash-resume and a hashed manifest, and
//! self-contained SVG plots of the standard result families.

pub mod kinds;
pub mod plot;
pub mod rows;
pub mod runner;
pub mod spec;
pub mod svg;

use thiserror::Error;

/// Errors mapped onto the process exit codes: spec problems exit 2,
/// execution failures 3, budget refusals 4.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("execution error: {0}")]
    Exec(String),
    #[error("budget refused: {0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Exec(_) => 3,
            CliError::Budget(_) => 4,
        }
    }
}

/// Environment variable naming the default output root for `run`.
pub const OUTPUT_ROOT_ENV: &str = "LOCLAB_OUT";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
