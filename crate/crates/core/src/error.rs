use thiserror::Error;

pub type Result<T> = std::result::Result<T, ExcirError>;

#[derive(Debug, Error)]
pub enum ExcirError {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("missing value at row {row}, column {column}")]
    Missing { row: usize, column: String },
    #[error("duplicate column name `{0}`")]
    DuplicateHeader(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("matrix is not positive definite: smallest eigenvalue {eigenvalue:e} ({context})")]
    Singular { eigenvalue: f64, context: String },
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ExcirError {
    /// True for failures that come from the numbers rather than from the
    /// caller's arguments or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ExcirError::Degenerate(_) | ExcirError::Singular { .. } | ExcirError::Consistency(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ExcirError::InvalidParameter(msg.into())
    }

    pub(crate) fn mismatch(what: impl Into<String>, expected: usize, found: usize) -> Self {
        ExcirError::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
