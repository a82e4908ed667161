use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },

    #[error("fft too small: fft_size {fft_size} < frame_len {frame_len}")]
    FftTooSmall { fft_size: usize, frame_len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate reference: all-zero signal")]
    DegenerateReference,

    #[error("unsupported channel count: {0}")]
    UnsupportedChannelCount(u16),

    #[error("unsupported sample format: format tag {format}, {bits} bits per sample")]
    UnsupportedFormat { format: u16, bits: u16 },

    #[error("malformed wav header: {0}")]
    MalformedWav(String),

    #[error("utterance {id}: {reason}")]
    Utterance { id: String, reason: String },

    #[error("utterance {id}: {labels} labels for {frames} frames")]
    LabelAlignment {
        id: String,
        labels: usize,
        frames: usize,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no noise available")]
    NoNoise,

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("numeric failure in {op} (node {node})")]
    NumericFailure { op: &'static str, node: usize },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("unknown kind: {0}")]
    UnknownKind(String),

    #[error("empty representation")]
    EmptyRepresentation,

    #[error("no unmasked frames")]
    NoUnmaskedFrames,

    #[error("contrastive batch needs at least one negative")]
    NoNegatives,

    #[error("need >=2 sentences, got {0}")]
    TooFewSentences(usize),

    #[error("non-finite loss component: {0}")]
    NonFiniteLoss(&'static str),

    #[error("not an MGF checkpoint")]
    NotCheckpoint,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt cache entry: {0}")]
    CorruptCache(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("stratification failed: class {class} has no samples at fraction {fraction}")]
    Stratification { class: usize, fraction: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
