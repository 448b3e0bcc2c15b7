use thiserror::Error;

/// Errors produced by the flow engine and its I/O layer.
#[derive(Debug, Error)]
pub enum FlowError {
    /// Two inputs disagree in shape, or an offset exceeds the map extent.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A file or byte stream is malformed.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

impl FlowError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        FlowError::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FlowError::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        FlowError::Format(msg.into())
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 = usage or validation, 2 = I/O, 3 = malformed input file.
    pub fn exit_code(&self) -> i32 {
        match self {
            FlowError::Dimension(_) | FlowError::Parameter(_) => 1,
            FlowError::Io(_) => 2,
            FlowError::Format(_) => 3,
        }
    }
}
