use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("envelope validation failed: {0}")]
    Envelope(String),

    #[error("target probability unreachable: channel noise floor exceeds requirement (target {target}, p(0) = {floor})")]
    Unreachable { target: f64, floor: f64 },

    #[error("target probability saturates the channel model numerically (target {0})")]
    Saturated(f64),

    #[error("T* search diverged; condition margin too small (cap {cap})")]
    TStarDiverged { cap: u64 },

    #[error("stability condition {condition} does not hold at level {level} (lhs {lhs})")]
    ConditionFails {
        condition: &'static str,
        level: f64,
        lhs: f64,
    },

    #[error("attack schedule violates the declared budget on window [{start}, {end})")]
    BudgetViolated { start: usize, end: usize },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
