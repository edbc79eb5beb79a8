use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or invariant-violating input. `line` is 1-based when known.
    #[error("{}", format_location(*.line, .message))]
    Format { line: Option<usize>, message: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The observed token has zero mass under the evaluation distribution.
    #[error("observed token at position {pos} has zero probability")]
    ImpossibleToken { pos: usize },

    #[error("no usable positions: {0}")]
    EmptyInput(String),

    #[error("text `{text_id}` carries only compact records; full distributions are required for {reason}")]
    RequiresFullRecords { text_id: String, reason: &'static str },

    #[error("vocabulary mismatch: expected {expected} entries, found {found}")]
    VocabularyMismatch { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format { line: None, message: message.into() }
    }

    pub(crate) fn format_at(line: usize, message: impl Into<String>) -> Self {
        Error::Format { line: Some(line), message: message.into() }
    }

    pub(crate) fn parameter(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }
}

fn format_location(line: Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("format error at line {line}: {message}"),
        None => format!("format error: {message}"),
    }
}
