use std::path::PathBuf;

/// Errors raised anywhere in the analysis, encoding, training, sampling and
/// evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("table has no rows")]
    EmptyTable,
    #[error("column `{column}`: cell {value:?} cannot be read as {expected}")]
    MixedTypeColumn {
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("group key `{0}` is not a column of the table")]
    UnknownGroupKey(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("category index {index} out of range for sub-column `{sub_column}` (cardinality {cardinality})")]
    IndexOutOfRange {
        sub_column: String,
        index: u32,
        cardinality: u32,
    },
    #[error("table is not sequential")]
    NotSequential,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid condition: {0}")]
    ConditionIndexInvalid(String),
    #[error("all probability mass excluded for sub-column `{0}`")]
    AllProbabilityMassExcluded(String),
    #[error("context schema mismatch: {0}")]
    ContextSchemaMismatch(String),
    #[error("too few units to split: {found} (need at least {required})")]
    TooFewRows { found: usize, required: usize },
    #[error("empty column `{0}`")]
    EmptyColumn(String),
    #[error("no sequences of length two or more")]
    NoSequencesOfLengthTwo,
    #[error("empty set: {0}")]
    EmptySet(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model store version {found} is incompatible with {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
