use thiserror::Error;

/// Errors raised by the simulator and the learning routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopoError {
    #[error("{kind} index {index} out of range (< {bound})")]
    IdOutOfRange {
        kind: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("a preference pair needs two distinct responses")]
    IdenticalResponses,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least 2 distinct candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("operation requires a tabular feature map")]
    NotTabular,
    #[error("requested {requested} portions but the seed dataset only holds {available}")]
    NotEnoughPortions { requested: usize, available: usize },
    #[error("misaligned inputs: {left} prompts vs {right} responses")]
    Misaligned { left: usize, right: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, CopoError>;

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CopoError::InvalidParameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

pub(crate) fn check_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(CopoError::InvalidParameter {
            name,
            value,
            reason: "must be finite and >= 0",
        })
    }
}
