use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("audio file not found: {0}")]
    MissingFile(PathBuf),

    #[error("manifest schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("manifest has no entries: {0}")]
    EmptyManifest(PathBuf),

    #[error("speaker sets overlap: {}", .0.join(", "))]
    SpeakerOverlap(Vec<String>),

    #[error("cannot sample from an empty corpus")]
    EmptyCorpus,

    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(u32),

    #[error("waveform is empty")]
    EmptyWaveform,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("text is empty")]
    EmptyText,

    #[error("input too short: {got} < {min} {unit}")]
    TooShort {
        got: usize,
        min: usize,
        unit: &'static str,
    },

    #[error("flow needs an even channel count, got {0}")]
    OddChannels(usize),

    #[error("alignment needs at least as many frames ({frames}) as tokens ({tokens})")]
    TooFewFrames { frames: usize, tokens: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
