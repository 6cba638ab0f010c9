use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    Diverged { epoch: usize, sample: usize },

    #[error("gradient check failed: worst relative error {worst:.3e} is not below {tolerance:e}")]
    GradientCheck { worst: f64, tolerance: f64 },

    #[error("no storm events detected")]
    NoStorms,

    #[error("incompatible models: {0}")]
    Incompatible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical failures are reported separately from validation errors by the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::GradientCheck { .. })
    }
}
