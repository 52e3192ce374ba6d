use thiserror::Error;

/// Errors raised by fitting, resampling, optimisation and inference routines.
///
/// Model and row indices are 1-based in messages, matching how candidate
/// models are numbered in reports.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("design of model {model} is rank deficient (rank {rank} < {k})")]
    RankDeficient { model: usize, rank: usize, k: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid candidate model set: {0}")]
    InvalidModels(String),

    #[error("invalid resample size m={m} for n={n} ({reason})")]
    InvalidSize { n: usize, m: usize, reason: &'static str },

    #[error("no full-rank resample found after {retries} draws (replicate {replicate})")]
    RankRetryExhausted { retries: usize, replicate: usize },

    #[error("residual sum of squares is zero; information criterion is -inf")]
    DegenerateFit,

    #[error("observation {row} has leverage one in model {model}")]
    LeverageOne { row: usize, model: usize },

    #[error("non-finite value in quadratic program input")]
    NonFinite,

    #[error("quadratic program did not meet KKT conditions after {iterations} iterations")]
    SolverNotConverged { iterations: usize },

    #[error("moment matrix Q is not positive definite")]
    SingularQ,

    #[error("covariance matrix is not positive definite")]
    SigmaNotPD,

    #[error("coefficient {coef} is not in model {model}")]
    CoefficientNotInModel { coef: usize, model: usize },

    #[error("solver failed on draw {draw}: {source}")]
    DrawFailed {
        draw: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("column {name:?} not found")]
    MissingColumn { name: String },

    #[error("CSV parse error at row {row}, column {col}: {message}")]
    ParseError { row: usize, col: usize, message: String },

    #[error("non-numeric value at row {row}, column {col}")]
    NonNumeric { row: usize, col: usize },

    #[error("column {col} has zero variance")]
    ZeroVariance { col: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Stable machine-readable kind, used in JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RankDeficient { .. } => "RankDeficient",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidDataset(_) => "InvalidDataset",
            Error::InvalidModels(_) => "InvalidModels",
            Error::InvalidSize { .. } => "InvalidSize",
            Error::RankRetryExhausted { .. } => "RankRetryExhausted",
            Error::DegenerateFit => "DegenerateFit",
            Error::LeverageOne { .. } => "LeverageOne",
            Error::NonFinite => "NonFinite",
            Error::SolverNotConverged { .. } => "SolverNotConverged",
            Error::SingularQ => "SingularQ",
            Error::SigmaNotPD => "SigmaNotPD",
            Error::CoefficientNotInModel { .. } => "CoefficientNotInModel",
            Error::DrawFailed { .. } => "DrawFailed",
            Error::MissingColumn { .. } => "MissingColumn",
            Error::ParseError { .. } => "ParseError",
            Error::NonNumeric { .. } => "NonNumeric",
            Error::ZeroVariance { .. } => "ZeroVariance",
            Error::Io(_) => "Io",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
