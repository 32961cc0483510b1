use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Gram matrix too ill-conditioned to invert: the data are not
    /// persistently exciting for the requested regression.
    #[error("singular Gram matrix (condition number {condition:.3e}); data are not persistently exciting")]
    SingularGram { condition: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("model is already folded")]
    AlreadyFolded,

    #[error("split '{0}' has no trajectories")]
    EmptySplit(&'static str),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    /// True for failures caused by the numbers rather than by the caller
    /// (ill-conditioning, divergence).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularGram { .. } | Error::NonFiniteState { .. } | Error::NonFiniteLoss { .. }
        )
    }
}
