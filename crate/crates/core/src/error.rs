use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("unknown factor `{factor}` in effect name `{name}`")]
    UnknownFactor { name: String, factor: String },

    #[error("factor `{factor}` repeated in effect name `{name}`")]
    DuplicateFactor { name: String, factor: String },

    #[error("empty effect name")]
    EmptyEffectName,

    #[error("effect {0} is not a factorial effect (the mean column is index 0)")]
    NotAnEffect(usize),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite covariate value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("singular covariance: {reason}")]
    SingularCovariance {
        column: Option<String>,
        reason: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("special function failed to converge: {0}")]
    NoConvergence(&'static str),

    #[error("invalid acceptance rule: {0}")]
    InvalidRule(String),

    #[error("balance profile is missing monitored effect {0}")]
    MissingEffect(String),

    #[error("no acceptable allocation within {max_draws} draws")]
    MaxDrawsExceeded { max_draws: u64 },

    #[error("unbalanced allocation: {0}")]
    UnbalancedAllocation(String),

    #[error("observed allocation does not satisfy the acceptance rule")]
    ObservedAllocationRejected,

    #[error("invalid R^2 target {0}; expected a value in [0, 1)")]
    InvalidRSquared(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
