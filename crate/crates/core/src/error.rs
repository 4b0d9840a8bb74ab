use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CfrError>;

#[derive(Debug, Error)]
pub enum CfrError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid bias rate {0}: |r| must lie in (1, 3], i.e. r in [-3, -1) or (1, 3]")]
    InvalidBiasRate(f64),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("generation stalled after {drawn} candidate draws ({accepted} of {requested} accepted) for {spec}")]
    GenerationStalled {
        spec: String,
        drawn: u64,
        accepted: usize,
        requested: usize,
    },

    #[error("training diverged at epoch {epoch} (lr_w = {lr_w}, lr_model = {lr_model}): {detail}")]
    Divergence {
        epoch: usize,
        lr_w: f64,
        lr_model: f64,
        detail: String,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("parse error at line {line}, field {field}: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("{context} requires at least {needed} entries, got {got}")]
    Empty {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("scenario cell failed ({cell}): {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<CfrError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CfrError {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        CfrError::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CfrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line contract:
    /// 2 config, 3 generation stall, 4 divergence, 5 data/dimension.
    pub fn exit_code(&self) -> i32 {
        match self {
            CfrError::Config(_) | CfrError::InvalidBiasRate(_) => 2,
            CfrError::GenerationStalled { .. } => 3,
            CfrError::Divergence { .. } => 4,
            CfrError::Cell { source, .. } => source.exit_code(),
            CfrError::Dimension { .. }
            | CfrError::Singular(_)
            | CfrError::Parse { .. }
            | CfrError::Consistency(_)
            | CfrError::Empty { .. }
            | CfrError::Io { .. }
            | CfrError::Json(_) => 5,
        }
    }
}
