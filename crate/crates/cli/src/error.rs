use thiserror::Error;

/// Every failure a subcommand can end with, mapped onto the exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("cannot bind {addr}: {reason}")]
    Bind { addr: String, reason: String },
    #[error("registry unreachable: {0}")]
    Unreachable(String),
    #[error("registration rejected ({code}): {message}")]
    Rejected { code: &'static str, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Bind { .. } => 3,
            CliError::Unreachable(_) | CliError::Rejected { .. } => 4,
            CliError::Io(_) => 1,
        }
    }
}
