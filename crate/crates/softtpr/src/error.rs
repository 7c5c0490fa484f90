use std::path::PathBuf;

/// Failures of a command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Format { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> CliError {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

impl From<softtpr_core::Error> for CliError {
    fn from(e: softtpr_core::Error) -> Self {
        use softtpr_core::Error as E;
        match e {
            E::NonFinite { .. } | E::SingularMatrix { .. } => CliError::Numeric(e.to_string()),
            E::InvalidArgument(_) | E::Capacity { .. } => CliError::Config(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
