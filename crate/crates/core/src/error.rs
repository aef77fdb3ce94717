use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, ranges or values the caller passed in do not satisfy an operation's contract.
    #[error("invalid input: {0}")]
    Input(String),

    /// A data file could not be parsed. Line numbers are 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A model document is malformed, from another schema version, or fails validation.
    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
