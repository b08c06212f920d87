use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated file: expected {expected} data bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("non-finite value at voxel {0}")]
    NonFiniteData(usize),
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("reference mask is empty")]
    EmptyReference,
    #[error("segmentation mask is empty")]
    EmptySegmentation,
    #[error("no index on axis {axis} exceeds the localization threshold")]
    EmptyProposal { axis: char },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("parse error: {0}")]
    Parse(String),
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
