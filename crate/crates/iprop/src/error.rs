use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit-code contract
/// (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("decode error: {0}")]
    Decode(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("graph structure error: {0}")]
    Structure(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("divergence is infinite: {0}")]
    Divergence(String),
    #[error("predictor error: {0}")]
    Predictor(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error when surfaced by the CLI.
    ///
    /// 1 = usage, 2 = I/O or validation, 4 = predictor/protocol, 5 = numerical.
    /// Exit 3 (max-iters without convergence) is not an error and is handled
    /// by the `propagate` command itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 5,
            Error::Predictor(_) | Error::Protocol(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
