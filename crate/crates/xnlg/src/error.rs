use std::path::{Path, PathBuf};

use xnlg_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage order: {0}")]
    Provenance(String),
    #[error("{0}")]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn data(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        CliError::Data {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 data, 4 divergence, 5 contamination.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Provenance(_) => 2,
            CliError::Data { .. } | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                CoreError::Divergence { .. } => 4,
                CoreError::Contamination(_) => 5,
                CoreError::InvalidConfig(_) | CoreError::InvalidArgument(_) | CoreError::UnmatchedPattern(_) => 2,
                CoreError::DimensionMismatch { .. }
                | CoreError::ZeroVector(_)
                | CoreError::NonFinite(_)
                | CoreError::DuplicateLanguage(_)
                | CoreError::UnknownLanguage(_)
                | CoreError::Shortfall { .. } => 3,
            },
        }
    }
}

/// Attach a path to core validation errors raised while reading a file.
pub(crate) fn in_file(path: &Path) -> impl Fn(CoreError) -> CliError + '_ {
    move |e| CliError::data(path, e.to_string())
}
