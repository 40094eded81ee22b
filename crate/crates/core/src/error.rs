use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },

    #[error("unsupported bit depth in {path}: {bits} bits per sample (only 8 is supported)")]
    UnsupportedBitDepth { path: PathBuf, bits: u16 },

    #[error("unsupported channel count in {path}: {channels} (expected 1 or 3)")]
    UnsupportedChannels { path: PathBuf, channels: u8 },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stitch break between frame {frame} and frame {next}: {inliers} inlier matches (need {required})")]
    StitchBreak {
        frame: usize,
        next: usize,
        inliers: usize,
        required: usize,
    },

    #[error("alignment failed{}: {reason}", round.map(|r| format!(" in round {r}")).unwrap_or_default())]
    AlignmentFailed { round: Option<usize>, reason: String },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("descriptor length mismatch: {a} vs {b} bits")]
    DescriptorLengthMismatch { a: usize, b: usize },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: correspondence out of image bounds")]
    OutOfBounds { path: PathBuf, line: u64 },

    #[error("label ids without palette entry: {0:?}")]
    OrphanLabels(Vec<u8>),

    #[error("palette has no \"sky\" category")]
    MissingSky,

    #[error("empty category: {0}")]
    EmptyCategory(String),

    #[error("unconstrained region: a connected component of {pixels} pixels has no boundary pixels")]
    UnconstrainedRegion { pixels: usize },

    #[error("exemplar source too small: no full {patch}x{patch} patch lies inside the source")]
    SourceTooSmall { patch: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
