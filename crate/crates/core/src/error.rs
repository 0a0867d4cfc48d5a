use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty model")]
    EmptyModel,

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("layer spans do not partition [0, {dim})")]
    BadSpans { dim: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid group partition: {0}")]
    BadPartition(String),

    #[error("scalar {index} is not strictly positive ({value})")]
    NonPositiveScalar { index: usize, value: f64 },

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("invalid index subset: {0}")]
    BadSubset(String),

    #[error("invalid similarity requirement: {0}")]
    BadRequirement(String),

    #[error("no updates to aggregate")]
    EmptyRound,

    #[error("too few clients: need at least {needed}, got {actual}")]
    TooFewClients { needed: usize, actual: usize },

    #[error("defense context is missing `{0}`")]
    MissingContext(&'static str),

    #[error("all submissions were rejected")]
    NoSurvivors,

    #[error("attack construction failed: {0}")]
    AttackFailed(String),

    #[error("no feasible grid point")]
    NoFeasiblePoint,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("round {round}: {source}")]
    Round { round: usize, source: Box<Error> },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
