use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid residue '{symbol}' in '{id}'{}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    IllegalResidue {
        id: String,
        symbol: char,
        line: Option<usize>,
    },

    #[error("empty sequence for '{0}'")]
    EmptySequence(String),

    #[error("duplicate id '{0}'")]
    DuplicateId(String),

    #[error("conflicting AMP labels for identical sequences: {0} and {1}")]
    ConflictingAmpLabel(String, String),

    #[error("{} id(s) missing from feature matrix: {}", .0.len(), .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no label has both positive and negative instances")]
    NoValidLabel,

    #[error("cannot cover label '{label}' with a subset of size {size}")]
    Coverage { label: String, size: usize },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("model format: {0}")]
    Format(String),

    #[error("checksum mismatch in section '{0}'")]
    Checksum(String),

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
