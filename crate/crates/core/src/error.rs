use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    Geometry(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("raw data file {path} too short: expected {expected} bytes, found {found}")]
    ShortRaw { path: PathBuf, expected: u64, found: u64 },

    #[error("unsupported element type {0}")]
    ElementType(String),

    #[error("invalid phantom spec: {0}")]
    PhantomSpec(String),

    #[error("histogram is not bimodal: {0}")]
    Unimodal(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("canal seed lies in bone ({value:.1} HU above threshold {threshold:.1} HU)")]
    SeedInBone { value: f64, threshold: f64 },

    #[error("degenerate constraint: {0}")]
    Degenerate(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("residual {0} lies outside the partition domain")]
    ResidualOutsideDomain(usize),

    #[error("balloon failure: {0}")]
    Balloon(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("study layout mismatch: {0}")]
    Layout(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
