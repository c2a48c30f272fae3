use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed document {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("improper rotation: determinant {det:.6} is negative")]
    ImproperRotation { det: f64 },

    #[error("rotation is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no frames")]
    NoFrames,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no positions selected")]
    NoPositionsSelected,

    #[error("{}training diverged at step {step}: loss = {loss}", member_prefix(.member))]
    Diverged {
        member: Option<usize>,
        step: usize,
        loss: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

fn member_prefix(member: &Option<usize>) -> String {
    match member {
        Some(m) => format!("member {m}: "),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Malformed { .. } => "malformed",
            Error::SchemaVersion { .. } => "schema_version",
            Error::ImproperRotation { .. } => "improper_rotation",
            Error::NotOrthonormal { .. } => "not_orthonormal",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NoFrames => "no_frames",
            Error::EmptyInput(_) => "empty_input",
            Error::NoPositionsSelected => "no_positions_selected",
            Error::Diverged { .. } => "diverged",
            Error::Config(_) => "config",
        }
    }
}
