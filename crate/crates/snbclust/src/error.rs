use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] snbclust_core::Error),
    #[error("{failed} of {total} replicates failed")]
    Replicates { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 unreadable or malformed input, 3 invalid
    /// request, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use snbclust_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Config(_) => 3,
            CliError::Core(E::Parse { .. }) => 2,
            CliError::Core(E::Validation(_) | E::Empty(_)) => 3,
            CliError::Core(E::Numeric(_) | E::AllRestartsDegenerate(_) | E::Degenerate(_)) => 4,
            CliError::Replicates { .. } => 4,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        }
    }
}
