use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("order grids differ between composed curves")]
    GridMismatch,

    #[error("empty order grid")]
    EmptyGrid,

    #[error("privacy target infeasible: {0}")]
    InfeasibleBudget(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("non-finite loss or gradient at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("label quota unreachable after {draws} draws: {detail}")]
    QuotaUnreachable { draws: usize, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),

    #[error("cannot parse `{value}` at row {row}, column `{column}`")]
    UnparsableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unknown category `{value}` in column `{column}` (row {row})")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty data file {0}")]
    EmptyFile(PathBuf),

    #[error("model file format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file is corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
