use thiserror::Error;

/// Errors raised by the sieve laboratory.
#[derive(Debug, Error)]
pub enum SieveError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("conjugate gradient did not converge: {iterations} iterations, relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("J_0 undefined at N=3")]
    J0UndefinedAtN3,

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("unresolved contact regions (fewer than {min_cells} cells across the diameter): {regions:?}")]
    UnresolvedHoles { min_cells: usize, regions: Vec<usize> },

    #[error("test field is not admissible: nonzero on {count} hole nodes (max |v| = {max_abs:e})")]
    NotAdmissible { count: usize, max_abs: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SieveError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> SieveError {
    SieveError::InvalidParameter { name, reason: reason.into() }
}
