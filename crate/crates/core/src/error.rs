use std::path::PathBuf;

/// Errors produced by the clustering pipeline and its building blocks.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    /// A feature cell could not be parsed as a finite real. Rows are 1-based
    /// data rows (header excluded), columns are 1-based.
    #[error("row {row}, column {column} ({name}): cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: usize,
        name: String,
        value: String,
    },

    #[error("column {0:?} not found in header")]
    MissingColumn(String),

    #[error("negative value {value} at row {row}, column {column}; log-normalization needs x >= 0")]
    NegativeValue { row: usize, column: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An internal invariant failed. Always a bug, never bad input.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
