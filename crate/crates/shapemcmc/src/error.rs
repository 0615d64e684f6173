//! Process-level errors and their exit codes.
//!
//! Every failure an experiment can hit is folded into [`CliError`], and each
//! variant maps to one documented exit code so scripts can branch on the
//! status alone:
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success                                             |
//! | 1    | usage error (flags, config values, argument parses) |
//! | 2    | data error (files, formats, degenerate inputs)      |
//! | 3    | internal invariant violation (a bug)                |

use std::io;
use std::path::PathBuf;

use shapemcmc_core::Error as CoreError;
use thiserror::Error;

/// Exit code for usage errors: bad flags, bad config values.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for data errors: unreadable or malformed files, degenerate
/// inputs.
pub const EXIT_DATA: i32 = 2;
/// Exit code for internal invariant violations.
pub const EXIT_INTERNAL: i32 = 3;

/// Anything that can abort a command, tagged with its failure class.
#[derive(Debug, Error)]
pub enum CliError {
    /// The caller asked for something invalid (bad flag value, bad config
    /// key, out-of-range parameter).
    #[error("{0}")]
    Usage(String),

    /// An input or output file failed: IO, parse, or checksum trouble.
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    /// The sampler or an input reached a degenerate state that is the
    /// data's fault, not the caller's.
    #[error("{0}")]
    Degenerate(String),

    /// A bug: an invariant the code promises internally was violated.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// Builds a data error naming the offending file.
    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> CliError {
        CliError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    /// The process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } | CliError::Degenerate(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    /// Wraps a core-library error, classifying it by blame: configuration
    /// mistakes are usage errors, degenerate numeric states are data
    /// errors, and invariant violations are internal.
    pub fn from_core(err: CoreError) -> CliError {
        match err {
            CoreError::InvalidConfig(_) => CliError::Usage(err.to_string()),
            CoreError::InternalInvariant(_) => CliError::Internal(err.to_string()),
            _ => CliError::Degenerate(err.to_string()),
        }
    }

    /// Wraps an IO error on a named path as a data error.
    pub fn from_io(path: impl Into<PathBuf>, err: io::Error) -> CliError {
        CliError::data(path, err.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> CliError {
        CliError::from_core(err)
    }
}

/// Result alias for command implementations.
pub type CliResult<T> = Result<T, CliError>;
