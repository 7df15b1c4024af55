use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate observation for entity '{entity}' year {year} at lines {lines:?}")]
    DuplicateRow {
        entity: String,
        year: i32,
        lines: Vec<usize>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("entity '{entity}' has inconsistent {field} at lines {lines:?}")]
    InconsistentEntity {
        entity: String,
        field: &'static str,
        lines: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index ({row}, {col}) outside a {n_rows}x{n_cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no entity has a complete trajectory ({dropped} dropped)")]
    AllDropped { dropped: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in the numerics rather than the
    /// shape or content of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Degenerate(_) | Error::Numerical(_)
        )
    }
}
