use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("sample weights sum to zero")]
    ZeroWeightSum,

    #[error("forest is missing cover statistics required for attribution")]
    MissingCovers,

    #[error("brute-force Shapley refused: {features} features exceeds the limit of {limit}")]
    TooManyFeatures { features: usize, limit: usize },

    #[error("rule factor `{factor}` has no mapping for value `{value}`")]
    UnmappedValue { factor: String, value: String },

    #[error("score {0} is outside 0..=100")]
    ScoreOutOfRange(i64),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("total evaluated mass is zero")]
    EmptyEvaluation,

    #[error("corpus spans {available} but the split needs {required}")]
    SpanTooShort { available: String, required: String },

    #[error("no rows carry an it_product value")]
    NoTeamRows,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
