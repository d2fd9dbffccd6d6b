use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated payload in frame {frame}")]
    Truncated { frame: usize },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point is behind the camera (depth {depth:.3} mm)")]
    BehindCamera { depth: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
