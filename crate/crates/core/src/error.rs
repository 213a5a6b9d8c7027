use thiserror::Error;

/// Errors raised by the estimators, training loop and data layer.
#[derive(Debug, Error)]
pub enum DkajError {
    #[error("no uncensored records: every subject is censored")]
    NoEvents,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("at-risk count is zero at time index {0}")]
    DegenerateRisk(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("query has no exemplar within the neighborhood radius")]
    EmptyNeighborhood,
    #[error("all cumulative incidences are zero at the last grid time")]
    NoRisk,
    #[error("event {0} has zero cumulative incidence; conditional median undefined")]
    UndefinedMedian(usize),
    #[error("no comparable pairs for event {0}")]
    NoComparablePairs(usize),
    #[error("evaluation grid needs at least two time points")]
    DegenerateGrid,
    #[error("cohort too small to split: {0} records")]
    TooSmall(usize),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DkajError> = std::result::Result<T, E>;
