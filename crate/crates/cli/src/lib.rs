//! Library surface of the `marginlab` binary: experiment configs, the
//! multi-seed runner, the verification-suite driver, and the SVG emitters.
//!
//! Everything the binary does is reachable from here, so integration tests
//! can drive experiments in-process and the binary stays a thin argument
//! parser.

pub mod config;
pub mod plots;
pub mod runner;
pub mod suite;
pub mod sweep;

/// Errors annotated with the process exit code they map to.
///
/// The binary's contract: 0 success, 1 check or runtime failure, 2 config
/// error, 3 divergence during training.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    CheckFailure(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::CheckFailure(_) => 1,
            CliError::Divergence(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<marginlab_core::Error> for CliError {
    fn from(e: marginlab_core::Error) -> Self {
        match e {
            marginlab_core::Error::Diverged { epoch, detail } => {
                CliError::Divergence(format!("diverged at epoch {epoch}: {detail}"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}
