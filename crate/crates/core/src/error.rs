use thiserror::Error;

/// Errors raised by calibration, training, data handling and the verification harnesses.
#[derive(Debug, Error)]
pub enum Error {
    #[error("calibration set of {n} scores is too small for the requested level: need rank {rank}")]
    QuantileOutOfRange { n: usize, rank: usize },

    #[error("empty score list")]
    EmptyScores,

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("transformed calibration score #{index} is not finite ({value})")]
    NonFiniteScore { index: usize, value: f64 },

    #[error("prediction radius is not finite ({0})")]
    NonFiniteRadius(f64),

    #[error("conformity score must be finite and non-negative, got {0}")]
    InvalidScore(f64),

    #[error("value {value} lies outside the codomain of the {family} transform")]
    OutOfCodomain { family: &'static str, value: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("parse error at row {row}, column {column} ({name}): {message}")]
    Parse {
        row: usize,
        column: usize,
        name: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("only {rank} positive eigenvalues for {requested} requested components")]
    RankDeficient { rank: usize, requested: usize },

    #[error("labels are constant ({0}); cannot normalize")]
    DegenerateLabels(f64),

    #[error("split part {part} would receive zero rows")]
    EmptyPart { part: usize },

    #[error("perturbed flow is not strictly increasing at a={a}, x={x} (slope {slope})")]
    MonotonicityViolated { a: f64, x: f64, slope: f64 },

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unsupported parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
