use thiserror::Error;

/// Errors raised by the model, simulator and oracle layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("queue index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("arrival carries {got} choices, expected d = {expected}")]
    ChoiceCount { got: usize, expected: usize },

    #[error("requested time {requested} exceeds stream horizon {horizon}")]
    InsufficientStream { requested: f64, horizon: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("states are not adjacent: {0}")]
    NotAdjacent(String),

    #[error("malformed event stream: {0}")]
    MalformedStream(String),

    #[error("state space of {states} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
