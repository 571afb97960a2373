use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, StsfaError>;

/// Errors surfaced by the library. CLI exit codes are derived from the variant.
#[derive(Debug, Error)]
pub enum StsfaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("unbalanced panel: {} missing cells, {} duplicate cells", .0.missing_cells.len(), .0.duplicate_cells.len())]
    Unbalanced(crate::panel::BalanceReport),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("log transform requested on column `{column}` containing non-positive value {value}")]
    NonPositiveLog { column: String, value: f64 },

    #[error("δ(ρ) not positive for units {units:?} at ρ = {rho}")]
    DeltaDomain { rho: f64, units: Vec<usize> },

    #[error("spatial solve failed: {0}")]
    Solve(String),

    #[error("weights do not match data units: {0}")]
    Misaligned(String),

    #[error("singular design matrix; collinear columns: {columns:?}")]
    Singular { columns: Vec<String> },

    #[error("non-finite log-likelihood at {context}")]
    NonFinite { context: String },
}

impl StsfaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StsfaError::Io {
            path: path.into(),
            source,
        }
    }
}
