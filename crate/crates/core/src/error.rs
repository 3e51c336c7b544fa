use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DstError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("invalid ontology: {0}")]
    Ontology(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} on dialog `{dialog}`")]
    Diverged { epoch: usize, dialog: String },

    #[error("model file checksum mismatch")]
    Checksum,

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { expected: String, found: String },

    #[error("model was trained against a different ontology (hash {model}, given {given})")]
    OntologyMismatch { model: String, given: String },

    #[error("nothing to score: no labeled turns")]
    NoScoredTurns,

    #[error("labels do not line up with tracker output: {0}")]
    LabelMismatch(String),

    #[error("invalid configuration: {0}")]
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

impl DstError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DstError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(DstError::Dimension {
                context,
                expected,
                got,
            })
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            DstError::Config(_) => 1,
            DstError::Dimension { .. } | DstError::NonFinite(_) | DstError::Diverged { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = DstError> = std::result::Result<T, E>;
