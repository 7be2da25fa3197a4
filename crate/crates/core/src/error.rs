use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh has zero surface area")]
    ZeroArea,

    #[error("scan is empty")]
    EmptyScan,

    #[error("no valid point-to-plane associations")]
    NoAssociations,

    #[error("not enough observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("grid has no free cells")]
    NoFreeCells,

    #[error("{what} pose ({x:.3}, {y:.3}) is inside an obstacle or outside the map")]
    BlockedEndpoint { what: &'static str, x: f64, y: f64 },

    #[error("no path between start and goal")]
    NoPath,

    #[error("trajectory needs at least two waypoints")]
    DegeneratePath,

    #[error("SOLM file error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("unsupported SOLM version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
