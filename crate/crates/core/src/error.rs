use thiserror::Error;

pub type Result<T, E = FgcnnError> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum FgcnnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("format error on line {line}: {detail}")]
    Format { line: usize, detail: String },

    #[error("cannot encode value: {0}")]
    Encoding(String),

    #[error("lookup error: field `{field}` has no feature index {index} (cardinality {cardinality})")]
    Lookup {
        field: String,
        index: u32,
        cardinality: usize,
    },

    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: String, index: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}; parameters restored to the last good epoch")]
    Diverged { epoch: usize, batch: usize },

    #[error("feature generation round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<FgcnnError>,
    },

    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(
        "schema digest mismatch: checkpoint was trained on schema {found}, \
         but the supplied schema hashes to {expected}; rebuild the vocabulary \
         from the original corpus or retrain"
    )]
    SchemaMismatch { expected: String, found: String },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0} gradient checks exceeded the tolerance")]
    GradCheckFailed(usize),

    #[error("config parse error: {0}")]
    Toml(String),
}

impl FgcnnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        FgcnnError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            FgcnnError::Config(_) | FgcnnError::Toml(_) => ErrorClass::Usage,
            FgcnnError::NonFinite { .. } | FgcnnError::Diverged { .. } | FgcnnError::GradCheckFailed(_) => ErrorClass::Numeric,
            FgcnnError::Round { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
