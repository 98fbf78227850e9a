use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies at non-positive camera depth {0}")]
    NonPositiveDepth(f64),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("degenerate baseline: relative translation {0:e} is below 1e-9")]
    DegenerateBaseline(f64),
    #[error("no motion evidence: every epipolar-error mask is empty")]
    EmptyMotion,
    #[error("degenerate scale-shift fit: {0}")]
    DegenerateFit(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("object {object} has no mask at frame {frame}")]
    MissingObjectMask { object: usize, frame: usize },
    #[error("track {0} is visible in fewer than two frames with valid depth")]
    InsufficientVisibility(u64),
    #[error("track {track} has no valid depth at frame {frame}")]
    InvalidDepthAtTrack { track: u64, frame: usize },
    #[error("scaffold graph has no nodes")]
    NoNodes,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("depth map has no valid pixels")]
    NoValidDepth,
    #[error("loss term `{0}` is not finite")]
    NonFiniteLoss(&'static str),
    #[error("optimization diverged at iteration {iteration}: loss {loss} exceeds 10x the best {best}")]
    DivergenceDetected { iteration: usize, loss: f64, best: f64 },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { kind, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable tag, used by the CLI's one-line error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth(_) => "NonPositiveDepth",
            Error::InvalidDepth(_) => "InvalidDepth",
            Error::DegenerateBaseline(_) => "DegenerateBaseline",
            Error::EmptyMotion => "EmptyMotion",
            Error::DegenerateFit(_) => "DegenerateFit",
            Error::EmptyMask => "EmptyMask",
            Error::MissingObjectMask { .. } => "MissingObjectMask",
            Error::InsufficientVisibility(_) => "InsufficientVisibility",
            Error::InvalidDepthAtTrack { .. } => "InvalidDepthAtTrack",
            Error::NoNodes => "NoNodes",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NoValidDepth => "NoValidDepth",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidCamera(_) => "InvalidCamera",
            Error::Format { .. } => "Format",
            Error::Io { .. } => "Io",
        }
    }
}
