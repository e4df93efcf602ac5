use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("zero variance in source statistics at dimension {0}")]
    ZeroVariance(usize),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("speaker {0} has no single-speaker frames")]
    NoSoloFrames(usize),

    #[error("empty segment [{start}, {end})")]
    EmptySegment { start: usize, end: usize },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("no reference speech")]
    NoReferenceSpeech,

    #[error("exhaustive search limit exceeded: {0}")]
    SearchLimit(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
