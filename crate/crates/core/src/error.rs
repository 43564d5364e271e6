use std::fmt;
use std::path::PathBuf;

use crate::image::PatchRegion;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Image edge violated by an out-of-bounds region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Bottom,
    Right,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edge::Bottom => f.write_str("bottom"),
            Edge::Right => f.write_str("right"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("region {region} crosses the {edge} edge of a {height}x{width} image")]
    Bounds {
        region: PatchRegion,
        edge: Edge,
        height: usize,
        width: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error in {path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error("no image pairs found under {0}")]
    EmptyDataset(PathBuf),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(path: impl Into<PathBuf>, reason: impl fmt::Display) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit status for this error: 3 data/IO, 4 configuration, 5 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data { .. } | Error::EmptyDataset(_) | Error::Io(_) | Error::Bounds { .. } => 3,
            Error::Parameter(_) | Error::Geometry(_) | Error::Config(_) | Error::Checkpoint(_) => 4,
            Error::Numeric(_) => 5,
        }
    }
}
