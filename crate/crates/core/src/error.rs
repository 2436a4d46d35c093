use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbVec(String),

    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("k = {k} must satisfy 1 <= k <= n = {n}")]
    InvalidK { k: usize, n: usize },

    #[error("empty neighbor set")]
    EmptyNeighbors,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("objective is +infinity for every gate value")]
    InfiniteObjective,

    #[error("soft gate did not converge: |dJ/dlambda| = {residual:e} at lambda = {lambda}")]
    NonConvergence { lambda: f64, residual: f64 },

    #[error("Bayes label is not unique (margin is zero)")]
    NonUniqueBayesLabel,

    #[error("degenerate target: Bayes cross-entropy equals base-model cross-entropy ({ell_bayes})")]
    DegenerateTarget { ell_bayes: f64 },

    #[error("nearest support point is not unique")]
    NonUniqueProjection,

    #[error("Lipschitz certificate violated: {lhs} > {rhs}")]
    LipschitzViolation { lhs: f64, rhs: f64 },

    #[error("invalid query {index}: {reason}")]
    InvalidQuery { index: usize, reason: String },

    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("malformed memory file: {0}")]
    MalformedStore(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
