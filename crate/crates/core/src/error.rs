use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid multiplier spec: {0}")]
    InvalidMultiplier(String),

    #[error("LUT format error: {0}")]
    LutFormat(String),

    #[error("IDX format error in {path}: {reason}")]
    IdxFormat { path: PathBuf, reason: String },

    #[error("model container error: {0}")]
    Container(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid model topology: {0}")]
    Topology(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("missing LUT for multiplier {0}")]
    MissingLut(String),

    #[error("model has no quantization parameters; run calibration first")]
    NotCalibrated,

    #[error("accumulator bound exceeded in layer {layer}: worst case {worst}")]
    AccumulatorBound { layer: usize, worst: i64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("empty subset")]
    EmptySubset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV/report error: {0}")]
    Report(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
