use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A function was evaluated outside of its domain, e.g. `F(r)` with `|r| >= 1`.
    #[error("{what}: argument {value} outside of domain")]
    Domain { what: &'static str, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("mode index {index} out of range (n_modes = {n_modes})")]
    ModeIndex { index: usize, n_modes: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("ensemble aborted: {failed} of {total} paths failed (first error: {first})")]
    EnsembleAborted {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerics (Newton, root finding), as opposed to
    /// bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. } | Error::Domain { .. } | Error::EnsembleAborted { .. }
        )
    }
}
