//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrodeError {
    /// A model or discretization constraint was violated at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    /// A function argument left its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Precondition of an operation not met by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The small-instance transport oracle was asked for a problem outside its scope.
    #[error("oracle scope exceeded: {0}")]
    OracleScope(String),

    /// The inner minimization failed to make progress.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// The finite-difference reference solver failed.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// Malformed or inconsistent run configuration text.
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorrodeError>;
