//! Scenario runner for crib-core: TOML scenarios in, CSV/JSON artifacts out,
//! plus parameter sweeps and the acceptance suite.

pub mod acceptance;
pub mod output;
pub mod run;
pub mod scenario;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad scenario, bad flag or a violated precondition.
    #[error("{0}")]
    Validation(String),
    /// The simulation itself failed.
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Acceptance(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Acceptance(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    /// Wraps a library error, naming the scenario block it came from.
    pub fn from_core(block: &str, e: crib_core::Error) -> Self {
        use crib_core::Error as E;
        match e {
            E::InvalidParameter { name, reason } => {
                CliError::Validation(format!("{block}.{name}: {reason}"))
            }
            E::ProtocolOrder(_) => CliError::Validation(format!("{block}: {e}")),
            _ => CliError::Numerical(format!("{block}: {e}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// `.map_err` helper: `core_call().ctx("crib")?`.
pub(crate) trait CoreContext<T> {
    fn ctx(self, block: &str) -> Result<T, CliError>;
}

impl<T> CoreContext<T> for crib_core::Result<T> {
    fn ctx(self, block: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(block, e))
    }
}
