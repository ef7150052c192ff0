use thiserror::Error;

/// Crate-wide error type. Variants are grouped by how the CLI maps them to
/// exit codes: usage, data/format, numeric.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch ({context}): expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("bit-length mismatch: {a} vs {b}")]
    BitLengthMismatch { a: usize, b: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed or inconsistent input data
    /// (as opposed to numeric failures).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::BitLengthMismatch { .. }
                | Error::Empty(_)
                | Error::Format { .. }
                | Error::Parse { .. }
                | Error::InvalidValue { .. }
                | Error::Io(_)
        )
    }
}
