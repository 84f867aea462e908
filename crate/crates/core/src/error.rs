use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: pair ({0}, {1}) with node count {2}")]
    OutOfRange(usize, usize, usize),

    #[error("duplicate interaction for user {user}, item {item}")]
    DuplicateInteraction { user: usize, item: usize },

    #[error("rating {value} does not map to a relation type in 1..={levels}")]
    RatingMapping { value: String, levels: usize },

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for this failure class: 1 for usage and
    /// configuration problems, 2 for bad input data, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Numerical(_) => 3,
            Error::Dimension { .. } | Error::Sampler(_) | Error::Structure(_) => 2,
            _ => 2,
        }
    }
}
