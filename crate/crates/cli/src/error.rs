use rerand_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const DIMENSION: i32 = 4;
    pub const SINGULAR: i32 = 5;
    pub const MAX_DRAWS: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Parse(_) => exit::PARSE,
            CliError::Io(_) => exit::OTHER,
            CliError::Core(e) => match e {
                Error::InvalidDesign(_)
                | Error::UnknownFactor { .. }
                | Error::DuplicateFactor { .. }
                | Error::EmptyEffectName
                | Error::NotAnEffect(_)
                | Error::InvalidRule(_)
                | Error::InvalidArgument(_)
                | Error::InvalidRSquared(_)
                | Error::Domain(_) => exit::USAGE,
                Error::NonFinite { .. } | Error::Parse(_) | Error::Csv(_) | Error::UnbalancedAllocation(_) => {
                    exit::PARSE
                }
                Error::DimensionMismatch { .. } | Error::MissingEffect(_) => exit::DIMENSION,
                Error::SingularCovariance { .. } => exit::SINGULAR,
                Error::MaxDrawsExceeded { .. } => exit::MAX_DRAWS,
                _ => exit::OTHER,
            },
        }
    }
}
