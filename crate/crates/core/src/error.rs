use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iteration limit of {sweeps} sweeps exceeded (last span {span:e})")]
    IterationLimitExceeded { sweeps: usize, span: f64 },

    #[error("embedded chain of the policy is not irreducible")]
    SingularChain,

    #[error("policy space of size {size} is too large to enumerate (limit {limit})")]
    PolicySpaceTooLarge { size: f64, limit: usize },

    #[error("confidence parameter delta = {0} is not in (0, 1)")]
    InvalidDelta(f64),

    #[error("no holding-time samples recorded for this pair")]
    NoSamples,

    #[error("empty rate interval [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("observation for ({state}, {action}) does not match the pending action {pending:?}")]
    OutOfOrderObservation { state: usize, action: usize, pending: Option<(usize, usize)> },

    #[error("support mismatch at index {index}: p > 0 but q = 0")]
    SupportMismatch { index: usize },

    #[error("rate must be positive, got {0}")]
    NonpositiveRate(f64),

    #[error("action {action} is optimal at state {state}")]
    NotSuboptimal { state: usize, action: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error is a numerical failure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IterationLimitExceeded { .. }
                | Error::SingularChain
                | Error::PolicySpaceTooLarge { .. }
                | Error::NoSamples
        )
    }
}
