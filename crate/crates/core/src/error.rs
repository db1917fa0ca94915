use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("time {t} outside schedule domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("cannot combine concrete and symbolic elements")]
    MixedElements,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("matrix validation failed: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("normalization failed: {0}")]
    Normalization(String),
    #[error("fold singularity at position {0}: partial coefficient sum is zero")]
    FoldSingularity(usize),
    #[error("degenerate guidance pair: a + b = 0")]
    DegeneratePair,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse { .. } => 4,
            Error::NonFinite(_)
            | Error::Numeric(_)
            | Error::Normalization(_)
            | Error::FoldSingularity(_)
            | Error::DegeneratePair => 3,
            _ => 2,
        }
    }
}

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
