use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} is not a probability vector (sum {sum}, min entry {min})")]
    NonSimplexVector { what: String, sum: f64, min: f64 },
    #[error("group weights sum to {sum}, expected 1")]
    WeightSumMismatch { sum: f64 },
    #[error("no groups given")]
    EmptyGroupList,
    #[error("duplicate group id `{0}`")]
    DuplicateGroup(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("expected 2 labels, got {0}")]
    NotBinary(usize),
    #[error("group `{0}` has no consistent confusion matrix")]
    InconsistentGroup(String),
    #[error("argument outside domain: {0}")]
    DomainError(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("LP solver failure: {0}")]
    LpFailure(String),
    #[error("LP solver numerical failure: {0}")]
    NumericalFailure(String),
    #[error("no beta in [0, 1] satisfies the cap")]
    InfeasibleCap,
    #[error("row {row} of group `{group}` is not row-stochastic (sum {sum})")]
    RowStochasticViolation { group: String, row: usize, sum: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
