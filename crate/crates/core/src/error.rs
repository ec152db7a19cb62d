use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("audio too short: {got} samples, need at least {need}")]
    AudioTooShort { got: usize, need: usize },

    #[error("audio contains non-finite samples (first at index {index})")]
    NonFiniteAudio { index: usize },

    #[error("unsupported sample rate {0} Hz (engine is fixed at 16000 Hz)")]
    BadSampleRate(u32),

    #[error("invalid augmentation spec: {0}")]
    BadAugmentSpec(String),

    #[error("feature dimension mismatch: got {got}, expected {expected}")]
    FeatureDim { got: usize, expected: usize },

    #[error("unknown transcript token `{0}`")]
    UnknownTranscript(String),

    #[error("alignment error: {0}")]
    BadAlignment(String),

    #[error("span of {frames} output frames too short for {states} HMM states")]
    SpanTooShort { frames: usize, states: usize },

    #[error("numerator lattice is empty (alignment/tolerance admits no path)")]
    EmptyNumerator,

    #[error("denominator graph admits no path of the requested length")]
    EmptyDenominator,

    #[error("graph has no accepted path of length {0}")]
    NoPath(usize),

    #[error("topology index out of range: {0}")]
    TopologyIndex(String),

    #[error("network config error: {0}")]
    BadNetworkConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("senone label {label} out of range (inventory {inventory})")]
    LabelOutOfRange { label: usize, inventory: usize },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("empty evaluation set")]
    EmptyEvalSet,

    #[error("no negative dev audio (H = 0)")]
    NoDevAudio,

    #[error("subset size {requested} exceeds {available} available positives")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("bad file format in {path}: {what}")]
    BadFormat { path: String, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
