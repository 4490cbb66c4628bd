use thiserror::Error;

/// Errors surfaced by the fitting core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point behind camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },

    #[error("empty silhouette mask")]
    EmptySilhouette,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("objective not finite at the starting point")]
    InvalidStart,

    #[error("frame has no usable detections")]
    UnfittableFrame,

    #[error("no fittable frames in the sequence")]
    NoFittableFrames,

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
