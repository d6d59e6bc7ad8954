use thiserror::Error;

/// Errors produced by the library.
///
/// Variants split into two groups: configuration problems (the inputs
/// describe something invalid or unsupported) and numerical failures
/// (valid inputs for which a solver did not deliver). The CLI maps
/// them to different exit codes via [`Error::is_config`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("requested size exceeds the supported limit: {0}")]
    TooLarge(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("covariance matrix is not positive semidefinite: leading minor of size {minor} has determinant {determinant:e}")]
    NotPositiveDefinite { minor: usize, determinant: f64 },

    #[error("circulant embedding of size {size} has eigenvalue {min_eigenvalue:e} below the tolerated floor")]
    NegativeEmbedding { size: usize, min_eigenvalue: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("root bracketing failed: {0}")]
    NoBracket(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the inputs rather than by a solver.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::TooLarge(_)
                | Error::Unsupported(_)
                | Error::NotPositiveDefinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
