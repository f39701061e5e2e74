use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or specification values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid argument to an operation.
    #[error("argument error: {0}")]
    Argument(String),

    /// Malformed input data at a known line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Input violates the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Numerical failure (bracketing, overflow, empty risk set, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Design matrix or information matrix is singular.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// A linear system required by calibration or variance estimation is
    /// rank deficient.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// Operation called on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// Sampling design inconsistent with the cohort.
    #[error("design error: {0}")]
    Design(String),

    /// Experiment-level failure in the simulation harness.
    #[error("experiment error: {0}")]
    Experiment(String),

    /// Summary statistics requested over an empty set.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric/convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 1,
            Error::Parse { .. } | Error::Schema(_) | Error::Io(_) | Error::Csv(_) => 2,
            Error::Numeric(_)
            | Error::DegenerateDesign(_)
            | Error::RankDeficient(_)
            | Error::State(_)
            | Error::Design(_)
            | Error::Experiment(_)
            | Error::Aggregation(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
