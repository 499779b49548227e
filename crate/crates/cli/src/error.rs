use nllab_core::runner::{ConfigError, RunError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Syntax {
        path: String,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(RunError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Syntax { .. } | Self::Config(_) | Self::Usage(_) => EXIT_CONFIG,
            Self::Run(e) => match e {
                RunError::Numeric { .. } | RunError::Simplex { .. } => EXIT_NUMERIC,
                RunError::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            },
            Self::Io { .. } | Self::Artifact { .. } => EXIT_IO,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Self::Config(c),
            other => Self::Run(other),
        }
    }
}
