use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An index (embedding row, time step, ...) is outside its valid range.
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    /// The API was called in an unsupported way (e.g. backward twice).
    #[error("invalid usage: {0}")]
    Usage(String),

    /// The input data violates a contract (bad label, empty sentence, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A configuration value is missing or out of its allowed range.
    #[error("invalid config: {0}")]
    Config(String),

    /// A text file could not be parsed.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A file that must be UTF-8 is not.
    #[error("{path} is not valid UTF-8")]
    Encoding { path: String },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// An ensemble member failed; the index identifies which one.
    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Model file was written by an unsupported format version.
    #[error("unsupported model file version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    /// Model file bytes do not match the stored checksum.
    #[error("model file checksum mismatch")]
    Checksum,

    /// Model file ends before the declared content does.
    #[error("model file truncated: {0}")]
    Truncated(String),

    /// Model file content is structurally invalid.
    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches the file path to an I/O error.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Error {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
