use thiserror::Error;

pub type Result<T> = std::result::Result<T, SmcError>;

/// Context attached to a starved partial-rejection loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StarvationReport {
    pub step: usize,
    pub slot: usize,
    pub attempts: u64,
    pub log_threshold: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("degenerate population: all weights are zero")]
    DegeneratePopulation,
    #[error("all weights zero")]
    AllWeightsZero,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("PRC starvation at step {}, slot {} after {} attempts", .0.step, .0.slot, .0.attempts)]
    PrcStarvation(Box<StarvationReport>),
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("simulator failure: {0}")]
    SimulatorFailure(String),
    #[error("malformed triangle input: {0}")]
    Triangle(String),
}

impl SmcError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SmcError::InvalidConfig(msg.into())
    }
}
