use std::path::PathBuf;

use crate::geom::DomainTag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is at the origin; azimuth is undefined")]
    ZeroVector,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid sensor spec: {0}")]
    InvalidSensorSpec(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expected a {expected:?} scene, got {found:?}")]
    DomainMismatch {
        expected: DomainTag,
        found: DomainTag,
    },
    #[error("could not place {k} disjoint sectors after {attempts} attempts")]
    SectorPackingFailed { k: usize, attempts: usize },
    #[error("box center lies on the z-axis; azimuth is undefined")]
    DegenerateAzimuth,
    #[error("loss requires at least one box")]
    EmptyBoxList,
    #[error("exactly one box set is empty; nearest-neighbour distance is undefined")]
    OneSidedEmpty,
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    TruncatedFile { path: PathBuf, len: u64 },
    #[error("{path}: non-finite value in point {index}")]
    NonFiniteValue { path: PathBuf, index: usize },
    #[error("{path}:{line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
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

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
