use lingscrub_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad configuration, malformed or inconsistent inputs.
    #[error("{0}")]
    Validation(String),
    #[error("missing upstream outputs: run the {0} stage first")]
    MissingStage(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::MissingStage(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        PipelineError::Validation(msg.into())
    }
}

impl From<CoreError> for PipelineError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. }
            | CoreError::SingularDesign
            | CoreError::NotPositiveDefinite { .. }
            | CoreError::DegeneratePairs
            | CoreError::Diverged { .. } => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Validation(e.to_string())
    }
}
