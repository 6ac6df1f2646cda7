use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and designer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("normalization impossible: {0}")]
    NormalizationImpossible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate field: {0}")]
    DegenerateField(String),

    #[error("config error in {path}: {field}: {message}")]
    Config {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this error: 2 for configuration problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure(_) | Error::DegenerateField(_) => 3,
            _ => 2,
        }
    }

    /// Short machine-readable kind tag used in the one-line CLI error summary.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::NormalizationImpossible(_) => "normalization-impossible",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::DegenerateField(_) => "degenerate-field",
            Error::Config { .. } => "config",
            Error::NotFound(_) => "not-found",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {value}")))
    }
}
