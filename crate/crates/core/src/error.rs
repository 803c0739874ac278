use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A set of convolutions could not be merged; `branch` is the index of the
    /// first branch that violates the merge precondition.
    #[error("cannot merge branch {branch}: {reason}")]
    CannotMerge { branch: usize, reason: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    TrainingDiverged { iteration: usize },

    #[error("parameter `{name}`: {message}")]
    ParameterMismatch { name: String, message: String },

    #[error("equivalence check failed: max abs diff {diff:e} exceeds {tol:e}")]
    Equivalence { diff: f64, tol: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
