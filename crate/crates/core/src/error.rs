use std::path::PathBuf;

/// Errors raised by the geometry, mixture, loss and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid residual for plane {index}: {reason}")]
    InvalidResidual { index: usize, reason: String },

    #[error("degenerate plane: distance {0} is zero")]
    DegeneratePlane(f64),

    #[error("degenerate homography: |det| = {0:e}")]
    DegenerateHomography(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("patch {patch} lies on a plane that is not in the bank")]
    PlaneNotInBank { patch: usize },

    #[error("scene: {0}")]
    Scene(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
