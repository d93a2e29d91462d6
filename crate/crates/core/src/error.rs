use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no segments")]
    NoSegments,

    #[error("no vertical patches ({rejected} rejected)")]
    NoVerticalPatches { rejected: usize },

    #[error("no candidates: every candidate mask is empty")]
    NoCandidates,

    #[error("filter collapsed: every particle hit a wall at step {step}")]
    FilterCollapsed { step: usize },

    #[error("resolution mismatch: {expected} m/cell vs {found} m/cell")]
    ResolutionMismatch { expected: f64, found: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("pose {x:.3},{y:.3} is not in free space")]
    PoseInWall { x: f64, y: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
