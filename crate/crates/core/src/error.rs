use std::path::PathBuf;

use crate::fpe::FpeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("duplicate id: {0}")]
    Duplicate(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("incomplete identity: missing {0}")]
    IncompleteIdentity(String),

    #[error("quad hash undefined: missing {0}")]
    UndefinedHash(String),

    #[error("object of {size} bytes exceeds the {max} byte limit")]
    TooLarge { size: u64, max: u64 },

    #[error("no vault at {0}")]
    VaultMissing(PathBuf),

    #[error("vault already initialized at {0}")]
    VaultExists(PathBuf),

    #[error("corrupt {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error(transparent)]
    Fpe(#[from] FpeError),

    #[error("I/O error on {path}: {source}")]
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

    pub fn is_not_found(&self) -> bool {
        matches!(self, Error::NotFound(_))
    }
}
