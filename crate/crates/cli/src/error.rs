use steerseg::Error;
use thiserror::Error as ThisError;

/// Command failure, classified by the exit code it maps to.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
        }
    }

    /// Diagnostic collapsed onto a single line.
    pub fn one_line(&self) -> String {
        self.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => CliError::Config(msg),
            Error::Contract(_)
            | Error::Format(_)
            | Error::Dataset(_)
            | Error::Generation(_)
            | Error::Io { .. }
            | Error::Image { .. } => CliError::Input(msg),
            Error::RowSum { .. }
            | Error::CotParse { .. }
            | Error::Capability(_)
            | Error::Frame { .. }
            | Error::NonFiniteLoss { .. } => CliError::Backend(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn input(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
