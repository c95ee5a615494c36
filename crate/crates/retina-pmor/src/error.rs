//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by model construction, solvers, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The requested mesh cannot be built (too few nodes, misaligned beam, ...).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A matrix factorization broke down (exact zero pivot or detected singularity).
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Mismatched dimensions between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An iterative solver failed to reach its contract.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A reduced model violates a stability requirement.
    #[error("unstable reduced model: {0}")]
    Unstable(String),

    /// The quadratic program has no feasible point.
    #[error("infeasible quadratic program: {0}")]
    QpInfeasible(String),

    /// Failure reading or writing result files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Failure parsing a configuration file.
    #[error("config parse error: {0}")]
    ConfigParse(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
