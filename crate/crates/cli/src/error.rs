use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Data {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Spec { path: PathBuf, message: String },

    #[error("grid axis `{axis}`: {message}")]
    Grid { axis: String, message: String },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] zispline::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn spec(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Spec {
            path: path.into(),
            message: message.into(),
        }
    }
}
