use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("no rows")]
    Empty,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("dataset has no {0}")]
    Missing(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used for the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::Empty => "empty",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Dimension(_) => "dimension",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Diverged(_) => "diverged",
            Error::Missing(_) => "missing",
            Error::Config(_) => "config",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
