use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("spectral leakage: {fraction:.3e} of the input energy falls on absorbing density outside the detuning grid (limit {limit:.1e})")]
    SpectralLeakage { fraction: f64, limit: f64 },

    #[error("numerical failure at time step {step}, slice {slice}: {reason}")]
    NumericalFailure {
        step: usize,
        slice: usize,
        reason: String,
    },

    #[error("protocol order: {0}")]
    ProtocolOrder(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("analysis failure: {reason} (residual {residual:.3e})")]
    AnalysisFailure { reason: String, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Fails with `InvalidParameter` unless `cond` holds.
pub(crate) fn ensure(cond: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason()))
    }
}
