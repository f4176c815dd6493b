use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported WAV encoding in {path}: {detail}")]
    UnsupportedWav { path: PathBuf, detail: String },
    #[error("truncated WAV data in {path}: {detail}")]
    TruncatedWav { path: PathBuf, detail: String },
    #[error("malformed WAV header in {path}: {detail}")]
    MalformedWav { path: PathBuf, detail: String },

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("synthesis requires a constant-overlap-add window/hop pair: {0}")]
    NotCola(String),
    #[error("negative amplitude {value} at index {index:?}")]
    NegativeAmplitude { value: f64, index: (usize, usize, usize) },
    #[error("empty input: {0}")]
    Empty(String),

    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRate { expected: u32, found: u32 },

    #[error("backward called before forward")]
    NoForwardCache,
    #[error("non-finite loss at epoch {epoch}, batch {batch}; layer parameter norms: {layer_norms:?}")]
    NanLoss {
        epoch: usize,
        batch: usize,
        layer_norms: Vec<f64>,
    },
    #[error("corrupt bundle file: {0}")]
    CorruptBundle(String),
    #[error("bundle version {found} is not supported (expected {expected})")]
    BundleVersion { found: u32, expected: u32 },
    #[error("corrupt dump file: {0}")]
    CorruptDump(String),

    #[error("spatial covariance is singular at bin {bin}, frame {frame}")]
    SingularCovariance { bin: usize, frame: usize },
    #[error("spatial covariance of bin {bin} is not Hermitian positive semidefinite")]
    IndefiniteCovariance { bin: usize },
    #[error("reference is silent; score undefined")]
    SilentReference,
    #[error("report mismatch: {0}")]
    ReportMismatch(String),
    #[error("no grid point passes the amplitude mask (signal too weak everywhere)")]
    EmptyMask,
    #[error("grid does not match the sampled signal: {0}")]
    GridMismatch(String),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Unreadable {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Unwritable {
            path: path.into(),
            source,
        }
    }
}
