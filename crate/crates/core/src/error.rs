use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion: norm is zero or not finite")]
    DegenerateQuaternion,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("BVH syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("unsupported channel `{0}`")]
    UnsupportedChannel(String),

    #[error("sequence of {len} frames is shorter than the window width {width}")]
    SequenceTooShort { len: usize, width: usize },

    #[error("invalid window: width {width}, offset {offset}")]
    InvalidWindow { width: usize, offset: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("mask has no keyframes")]
    NoKeyframes,

    #[error("unknown frame {0} has no preceding keyframe")]
    NoPrecedingKeyframe(usize),

    #[error("mask length {mask} does not match sequence length {seq}")]
    MaskLengthMismatch { mask: usize, seq: usize },

    #[error("frame label index {0} is outside {{0, 1, 2}}")]
    LabelIndex(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("normalization statistics are required")]
    MissingStats,

    #[error("need at least {need} unknown frames, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("scenario does not fit: {0}")]
    DoesNotFit(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
