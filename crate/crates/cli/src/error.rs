use thiserror::Error;

/// Failure of a CLI invocation, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Wraps a core error, prefixing `context`.
    pub fn core(context: impl std::fmt::Display, err: opensys::Error) -> Self {
        let msg = format!("{context}: {err}");
        if err.is_numerical() {
            CliError::Numerical(msg)
        } else {
            CliError::Invalid(msg)
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) trait Context<T> {
    fn context(self, ctx: impl std::fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for opensys::Result<T> {
    fn context(self, ctx: impl std::fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::core(ctx, e))
    }
}
