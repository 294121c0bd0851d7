use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("degenerate cell: volume radicand {radicand} is not positive")]
    DegenerateCell { radicand: f64 },

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown element {0}")]
    UnknownElement(String),

    #[error("element Z={0} missing from table")]
    MissingElement(u8),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: record {id:?}: {message}")]
    InvalidRecord {
        line: usize,
        id: String,
        message: String,
    },

    #[error("duplicate record id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },

    #[error("unsupported symmetry: {0} (only P1 files are accepted)")]
    UnsupportedSymmetry(String),

    #[error("missing CIF tag {0}")]
    MissingTag(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

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
}
