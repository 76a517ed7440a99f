use std::path::PathBuf;

/// Errors raised across the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Kinematic constraints that no walk can satisfy.
    #[error("infeasible constraints: {0}")]
    Constraint(String),

    /// Index outside the valid frame span.
    #[error("frame {frame} out of range (scenario has {n_frames} frames)")]
    FrameOutOfRange { frame: usize, n_frames: usize },

    /// Caller violated an operation contract (shape mismatch, too few frames, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A target outside the unambiguous range/speed interval of the OFDM grid.
    #[error("target {index} aliases: {reason}")]
    Alias { index: usize, reason: String },

    /// Invalid experiment or model configuration; `field` names the culprit.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
