use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad category of an error, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Contract,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("generation failed after {attempts} distractor attempts (reseed and retry)")]
    Generation { attempts: usize },

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unknown parameter `{0}` in checkpoint")]
    UnknownParameter(String),

    #[error("missing parameter `{0}` in checkpoint")]
    MissingParameter(String),

    #[error("dimension mismatch for `{name}`: model expects {expected}, checkpoint has {found}")]
    DimensionMismatch {
        name: String,
        expected: Dims,
        found: Dims,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::Version { .. }
            | Error::Truncated(_)
            | Error::Malformed(_) => ErrorKind::Io,
            _ => ErrorKind::Contract,
        }
    }
}

/// Shape list with a compact `[a×b×c]` display.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}
