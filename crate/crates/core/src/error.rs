use std::path::PathBuf;

use dualtrace_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("degenerate constrained kernel {index}: non-center weights sum to {sum:e}")]
    DegenerateKernel { index: usize, sum: f64 },
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    #[error("channel count {channels} is not divisible by {divisor}")]
    BadChannels { channels: usize, divisor: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("threshold {0} outside the open interval (0, 1)")]
    InvalidThreshold(f64),
    #[error("no checkpoint loaded")]
    NoCheckpoint,
    #[error("metric undefined: neither prediction nor ground truth has positive pixels")]
    NoPositives,
    #[error("AUC undefined: ground truth contains a single class")]
    DegenerateLabels,
    #[error("missing file {path} (record {record})")]
    MissingFile { record: usize, path: PathBuf },
    #[error("record {record}: mask {mask:?} does not match image {image:?}")]
    DimensionMismatch { record: usize, image: (u32, u32), mask: (u32, u32) },
    #[error("record {record}: duplicate image path {path}")]
    DuplicatePath { record: usize, path: PathBuf },
    #[error("record {record}: unknown split tag `{tag}`")]
    BadSplitTag { record: usize, tag: String },
    #[error("manifest line {line}: {detail}")]
    ManifestSyntax { line: usize, detail: String },
    #[error("cannot decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical divergence at step {step}: loss is {loss}")]
    NumericalDivergence { step: u64, loss: f64 },
    #[error("constrained kernels violate the constraint after step {step}: residual {residual:e}")]
    ConstraintViolation { step: u64, residual: f64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("run directory {0} is locked by another training process")]
    Locked(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::InvalidHyper(_) | Self::InvalidThreshold(_) => 2,
            Self::MissingFile { .. }
            | Self::DimensionMismatch { .. }
            | Self::DuplicatePath { .. }
            | Self::BadSplitTag { .. }
            | Self::ManifestSyntax { .. }
            | Self::Decode { .. }
            | Self::Data(_)
            | Self::DegenerateLabels
            | Self::NoPositives => 3,
            Self::NumericalDivergence { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
