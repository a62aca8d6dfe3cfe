use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation precondition was violated by the caller.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Transport-level failure that survived every retry.
    #[error("backend failed after {attempts} attempts: {message}")]
    Retriable { attempts: u32, message: String },

    /// The model kept replying with output that does not parse as the declared object.
    #[error("unparseable model output after {attempts} attempts: {message}")]
    Content {
        attempts: u32,
        message: String,
        raw: String,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        trace: Vec<f64>,
    },

    #[error("Heywood case: error variance of `{0}` collapsed to zero")]
    Heywood(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the command line front-end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Backend,
    Numerical,
    Data,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Retriable { .. } | Error::Content { .. } => ErrorKind::Backend,
            Error::Numerical(_) | Error::NonConvergence { .. } | Error::Heywood(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
