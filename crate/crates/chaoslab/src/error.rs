use crate::config::ConfigError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const BUDGET: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{stage}: {source}")]
    Core {
        stage: String,
        #[source]
        source: chaoslab_core::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl AppError {
    pub fn core(stage: &str, source: chaoslab_core::Error) -> Self {
        AppError::Core {
            stage: stage.to_string(),
            source,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use chaoslab_core::Error as E;
        match self {
            AppError::Config(_) => exit::CONFIG,
            AppError::Core { source, .. } => match source {
                E::Budget(_) => exit::BUDGET,
                E::Config(_) | E::InvalidArgument(_) | E::UnknownKernel(_) | E::ConstraintViolation { .. } => {
                    exit::CONFIG
                }
                _ => exit::NUMERICAL,
            },
            AppError::Io { .. } | AppError::Other(_) => exit::OTHER,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
