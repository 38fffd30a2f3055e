use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value at ({row},{col})")]
    NonFinite { row: usize, col: usize },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed {what} at line {line}: {detail}")]
    Parse {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error("class {class} unused in task {task}")]
    UnusedClass { task: String, class: usize },

    #[error("unknown parcel {0}")]
    UnknownParcel(String),

    #[error("unknown ROI {0}")]
    UnknownRoi(String),

    #[error("ROI {0} has no voxels with defined values")]
    EmptyRoi(String),

    #[error("{task} value {value} out of documented range")]
    OutOfRange { task: String, value: i64 },

    #[error("sentence index {index} out of range for {sentences} sentences")]
    SentenceIndex { index: usize, sentences: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("singular design, use λ>0")]
    SingularDesign,

    #[error("system is not positive definite (condition estimate {condition:.3e})")]
    NotPositiveDefinite { condition: f64 },

    #[error("no tasks")]
    NoTasks,

    #[error("degenerate pairs: differences have zero variance")]
    DegeneratePairs,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("classifier diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("no time point receives kernel weight; timeline lies outside the scan")]
    EmptyTimeline,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }
}
