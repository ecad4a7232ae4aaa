use thiserror::Error;

use crate::data::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty file: no data rows")]
    EmptyFile,

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid dataset:\n{0}")]
    Invalid(ValidationReport),

    #[error("covariate required: model {0} uses the cluster covariate `x`")]
    CovariateRequired(String),

    #[error("at least {needed} pairs are required, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("fixed-effect design is rank deficient")]
    RankDeficient,

    #[error("parameter vector has length {got}, expected {expected}")]
    Arity { expected: usize, got: usize },

    #[error("random-effect covariance is not positive semidefinite")]
    NotPsd,

    #[error("residual variance must be positive, got {0}")]
    NonPositiveResidual(f64),

    #[error("fixed-effect vector has length {got}, expected {expected}")]
    FixedArity { expected: usize, got: usize },

    #[error("models are not nested: {null} is not a sub-model of {alt}")]
    NotNested { null: String, alt: String },

    #[error("likelihood-ratio tests require ML fits, not REML")]
    RemlFit,

    #[error("fits were computed on different datasets")]
    DatasetMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),
}
