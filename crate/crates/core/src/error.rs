use std::io;

use thiserror::Error;

pub type Result<T, E = BwlaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BwlaError {
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("SVD did not converge after {sweeps} Jacobi sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("singular factor: smallest singular value {smallest:e}")]
    SingularFactor { smallest: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("matrix `{id}`: {source}")]
    Matrix {
        id: String,
        #[source]
        source: Box<BwlaError>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BwlaError {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        BwlaError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        BwlaError::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Attaches a matrix identifier to an error raised while processing it.
    pub fn in_matrix(self, id: impl Into<String>) -> Self {
        BwlaError::Matrix {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
