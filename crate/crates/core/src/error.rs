use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {model}")]
    NonFinite { model: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("value out of bounds: {0}")]
    OutOfBounds(String),

    #[error("scripted expert failed on {env}: {detail}")]
    ExpertFailure { env: String, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("misaligned evaluation grids: {0}")]
    MisalignedGrid(String),

    #[error("run aborted at {at}: {source}")]
    Aborted { at: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}
