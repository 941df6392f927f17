use thiserror::Error;

/// Errors raised by the workbench engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    VocabularyMismatch { token: usize, vocab_size: usize },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("numeric error in context {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate aggregation weights: every score is zero")]
    DegenerateWeights,

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
