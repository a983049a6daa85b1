use std::path::PathBuf;

/// Errors produced anywhere in the probing, attack and defense pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("degenerate labels: both grounded and hallucinated samples are required")]
    DegenerateLabels,

    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("no {class} samples among the selected rows")]
    EmptyClass { class: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: file does not start with HNACTDMP and is not a text dump")]
    BadMagic,

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("attack had no amplitude")]
    ZeroAmplitude,

    #[error("projection direction is not unit length (norm {norm})")]
    NonUnitVector { norm: f64 },

    #[error("inconsistent split fingerprints: {0}")]
    InconsistentSplits(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by unreadable or malformed inputs, as opposed
    /// to numeric failures discovered while running a stage.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic
                | Error::VersionMismatch { .. }
                | Error::TruncatedPayload { .. }
                | Error::DimensionMismatch(_)
                | Error::Header(_)
                | Error::Io { .. }
                | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
