use thiserror::Error;

/// Errors produced by the model-fitting library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed arguments: bad dimensions, non-finite entries, out-of-range values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called on a value that breaks its precondition
    /// (for example a matrix that is not positive definite).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A domain object failed validation.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A protein name could not be resolved against the dataset.
    #[error("unknown protein name `{0}`")]
    UnknownName(String),

    /// The chain could not be initialized from the given data.
    #[error("chain initialization failed: {0}")]
    Init(String),

    /// The chain hit a non-finite likelihood; carries the offending state.
    #[error("numerical abort after sweep {sweep}: non-finite log-likelihood")]
    NumericalAbort { sweep: usize, state: Box<crate::model::ChainState> },

    /// The sampler produced a non-finite quantity it could not recover from.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
