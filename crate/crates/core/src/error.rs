use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated data: expected {expected} bytes of voxel data, found {found}")]
    TruncatedData { expected: usize, found: usize },

    #[error("non-finite voxel value at linear index {index}")]
    NonFiniteVoxel { index: usize },

    #[error("mask contains no inside voxels")]
    EmptyMask,

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("N<2: at least 2 subjects are required, found {0}")]
    TooFewSubjects(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("p-value {value} at index {index} is outside [0, 1]")]
    InvalidP { index: usize, value: f64 },

    #[error("cluster {0} has no uncorrected p-value")]
    MissingP(usize),

    #[error("ambiguous join: {0}")]
    DuplicateAmbiguity(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem itself rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
