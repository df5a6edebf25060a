use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of a failure, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot use value `{value}` (expected a finite number)")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("table needs at least {min} rows, found {found}")]
    TooFewRows { min: usize, found: usize },
    #[error("table has no feature columns")]
    NoFeatures,
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    InvalidRatio { name: &'static str, value: f64 },
    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("no training rows fall below the density threshold; raise the percentile")]
    EmptyLowDensity,
    #[error("density model was fitted on {fitted} rows but the seeded split yields {expected} training rows")]
    DensityMismatch { fitted: usize, expected: usize },
    #[error("variable index x{index} out of range for {dims} features")]
    VariableOutOfRange { index: usize, dims: usize },
    #[error("cannot parse expression at byte {pos}: {msg}")]
    ExprParse { pos: usize, msg: String },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("cells have unequal run counts: {0}")]
    RaggedCells(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported model file version {0}")]
    ModelVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("run seed {seed}, teacher {teacher}, student {student} on `{dataset}`: {source}")]
    Cell {
        dataset: String,
        seed: u64,
        teacher: String,
        student: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::InvalidBandwidth(_)
            | Error::InvalidRatio { .. }
            | Error::ModelVersion(_) => ErrorClass::Config,
            Error::NonFiniteLoss { .. } | Error::EmptyLowDensity => ErrorClass::Numeric,
            Error::Cell { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
