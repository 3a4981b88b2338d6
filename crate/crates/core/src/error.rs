use alloc::string::String;

/// Errors raised by the numerical core.
///
/// Variants fall into three families that the command line maps to distinct
/// exit codes: input parsing, validation of preconditions, and numerical
/// failure during fitting.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("empty result: {0}")]
    Empty(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("all {0} restarts produced a vanishing cluster")]
    AllRestartsDegenerate(usize),
    #[error("degenerate clustering: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = core::result::Result<T, Error>;
