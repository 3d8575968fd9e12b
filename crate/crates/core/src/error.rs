use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("batch-norm channel {channel} has zero scale and cannot be folded into a threshold")]
    ZeroGamma { channel: usize },

    #[error("batch-norm running statistics have not been finalized")]
    UnfinalizedBatchNorm,

    #[error("tape was recorded for parameter generation {tape}, but parameters are at generation {current}")]
    StaleTape { tape: u64, current: u64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{stage} training diverged (non-finite loss) at step {step}")]
    Diverged { stage: &'static str, step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {}: run `{command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: String },

    #[error("packed and reference paths disagree: {0}")]
    Equivalence(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
