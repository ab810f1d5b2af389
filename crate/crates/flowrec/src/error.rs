//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed topology: duplicate ids, dangling references, bad constraint rows.
    #[error("topology: {0}")]
    Topology(String),

    /// Invalid configuration file or scenario description.
    #[error("config: {0}")]
    Config(String),

    /// The system of measurements plus constraints does not determine all node values.
    #[error("not estimable: {0}")]
    NotEstimable(String),

    /// A linear system inside the solver is singular or too ill-conditioned to trust.
    #[error("singular system: {0}")]
    Singular(String),

    /// Vector and matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument violates its documented domain (e.g. alpha outside (0,1)).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config/io, 2 estimability, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NotEstimable(_) => 2,
            Error::Singular(_) | Error::Dimension(_) => 3,
            _ => 1,
        }
    }
}
