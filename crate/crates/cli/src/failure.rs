use std::fmt;
use std::path::Path;

use netsketch::Error;

/// Why a command did not succeed, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// A verification check failed (exit 1).
    Verify(String),
    /// Bad flags or arguments (exit 2).
    Usage(String),
    /// Unreadable, unwritable or malformed files (exit 3).
    Input(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
        }
    }

    /// Error while reading or writing `path`.
    pub fn file(path: &Path, err: Error) -> Self {
        Failure::Input(format!("{}: {err}", path.display()))
    }

    /// Error from a library computation on already-loaded data.
    pub fn compute(err: Error) -> Self {
        match err {
            Error::InvalidArgument(_) | Error::Geometry { .. } | Error::InvalidShape { .. } => {
                Failure::Usage(err.to_string())
            }
            other => Failure::Verify(other.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verify(m) | Failure::Usage(m) | Failure::Input(m) => f.write_str(m),
        }
    }
}
