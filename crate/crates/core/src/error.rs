use std::fmt;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("optimizer diverged: {0}")]
    Divergence(String),
    #[error("{0}")]
    Parse(ParseLocation),
    #[error("model file: {0}")]
    Schema(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Position of a parse failure inside a text input.
#[derive(Debug, Clone)]
pub struct ParseLocation {
    pub source: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}",
            self.source, self.line, self.column, self.message
        )
    }
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(
        source: impl Into<String>,
        line: usize,
        column: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse(ParseLocation {
            source: source.into(),
            line,
            column,
            message: message.into(),
        })
    }

    /// True for failures caused by the training data or optimizer rather
    /// than by malformed input files.
    pub fn is_training_failure(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::Divergence(_) | Error::Parameter(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
