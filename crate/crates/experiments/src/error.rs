use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Core(#[from] psafe_core::Error),
    #[error("expression `{source_text}`: {message} at offset {offset}")]
    Expression {
        source_text: String,
        offset: usize,
        message: String,
    },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("trajectory {trajectory}, step {step}: {source}")]
    AtStep {
        trajectory: usize,
        step: usize,
        source: psafe_core::Error,
    },
}

impl ExperimentError {
    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
