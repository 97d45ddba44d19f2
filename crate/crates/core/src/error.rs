use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported dimension {requested}: the direction-number table covers at most {max}")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value {value} lies outside the binned range [{low}, {high}]")]
    OutOfRange { value: f64, low: f64, high: f64 },

    #[error("degenerate column {0}: minimum equals maximum on the training data")]
    DegenerateColumn(usize),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("machine {machine}: {source}")]
    Machine {
        machine: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("payload decode error: {0}")]
    Payload(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn on_machine(self, machine: usize) -> Self {
        Error::Machine {
            machine,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
