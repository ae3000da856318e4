//! Crate-wide error type and the exit-code categories the CLI maps it to.

use std::path::Path;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong across the toolkit.
///
/// Variants are grouped by concern rather than by module so callers (CLI,
/// FFI) can map them to a small, stable set of categories via
/// [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Syntactic or semantic problem tied to a specific line of an input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A whole dataset or argument is unusable (empty column, bad range, …).
    #[error("invalid data: {message}")]
    InvalidData { message: String },

    /// Not enough rows/values for the requested operation.
    #[error("insufficient data: {message}")]
    InsufficientData { message: String },

    /// Tensor/graph shapes are incompatible; the message names both shapes.
    #[error("shape mismatch: {message}")]
    ShapeMismatch { message: String },

    /// A value left the mathematical domain of an operation
    /// (log of a non-positive number, zero standard deviation, …).
    #[error("domain error: {message}")]
    Domain { message: String },

    /// A graph was reused after `backward` consumed it.
    #[error("graph already consumed by backward")]
    GraphConsumed,

    /// Adversarial training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// An iterative model fit produced a non-finite loss.
    #[error("fit diverged at iteration {iteration}: {message}")]
    FitDiverged { iteration: usize, message: String },

    /// A checkpoint or serialized model could not be read back.
    #[error("checkpoint error: {message}")]
    Checkpoint { message: String },

    /// Two dated series do not line up; the message names the dates.
    #[error("date alignment error: {message}")]
    Alignment { message: String },

    /// Bad configuration: CLI flags, TOML contents, or their combination.
    #[error("config error: {message}")]
    Config { message: String },
}

/// Coarse error families, used for CLI exit codes and FFI status codes.
///
/// The numeric values are a stable contract: they are the process exit codes
/// documented in the README and the non-zero half of the FFI status space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCategory {
    /// Configuration or usage problems.
    Config = 2,
    /// Filesystem and OS-level failures.
    Io = 3,
    /// Malformed or inconsistent input data.
    Data = 4,
    /// Numeric trouble: shapes, domains, degenerate scales, graph misuse.
    Numeric = 5,
    /// A training or fitting run diverged.
    Diverged = 6,
}

impl Error {
    /// The coarse category this error belongs to.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse { .. }
            | Error::InvalidData { .. }
            | Error::InsufficientData { .. }
            | Error::Alignment { .. }
            | Error::Checkpoint { .. } => ErrorCategory::Data,
            Error::ShapeMismatch { .. } | Error::Domain { .. } | Error::GraphConsumed => {
                ErrorCategory::Numeric
            }
            Error::TrainingDiverged { .. } | Error::FitDiverged { .. } => ErrorCategory::Diverged,
            Error::Config { .. } => ErrorCategory::Config,
        }
    }

    /// Helper for wrapping `std::io::Error` with the offending path.
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidData {
            message: message.into(),
        }
    }

    pub fn insufficient(message: impl Into<String>) -> Self {
        Error::InsufficientData {
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain {
            message: message.into(),
        }
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Error::Checkpoint {
            message: message.into(),
        }
    }

    pub fn alignment(message: impl Into<String>) -> Self {
        Error::Alignment {
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            message: message.into(),
        }
    }
}
