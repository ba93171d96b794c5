use std::path::PathBuf;

/// Errors produced by the solver, the degradation simulator and the I/O helpers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate kernel: |L| = {det:e} (precision matrix collapsed)")]
    DegenerateKernel { det: f64 },

    #[error("numerical divergence at iteration {iteration} ({stage})")]
    Divergence { iteration: usize, stage: &'static str },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the CLI: 1 for validation and I/O, 2 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::DegenerateKernel { .. } => 2,
            _ => 1,
        }
    }
}
