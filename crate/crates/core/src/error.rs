use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate geometry for user {user}: channel rank {rank} < {expected}")]
    DegenerateGeometry {
        user: usize,
        rank: usize,
        expected: usize,
    },

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("decode failure: {0}")]
    DecodeFailure(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("problem too large: {points:.3e} grid points exceed budget {budget:.3e}")]
    ProblemTooLarge { points: f64, budget: f64 },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite value in layer {layer}: {msg}")]
    Numeric { layer: usize, msg: String },

    #[error("training diverged; last finite epoch was {last_finite_epoch}")]
    TrainingFailure { last_finite_epoch: usize },

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
