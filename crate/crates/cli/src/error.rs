use thiserror::Error;

/// CLI failure; each variant maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent config, model file or flags.
    #[error("config error: {0}")]
    Config(String),
    /// Data file that fails validation or does not fit the model.
    #[error("data error: {0}")]
    Data(String),
    /// Failure inside the library while fitting or predicting.
    #[error("numerical error [{name}]: {0}", name = .0.name())]
    Numerical(svgp::Error),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<svgp::Error> for CliError {
    fn from(e: svgp::Error) -> Self {
        CliError::Numerical(e)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Library errors raised while building a model from its config.
pub fn config_err(e: svgp::Error) -> CliError {
    CliError::Config(format!("{} ({})", e, e.name()))
}

/// Library errors raised while checking data against a model.
pub fn data_err(e: svgp::Error) -> CliError {
    CliError::Data(format!("{} ({})", e, e.name()))
}
