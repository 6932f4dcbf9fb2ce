use std::fmt;
use std::path::Path;

/// Failure of a subcommand together with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_MISSING: u8 = 4;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    pub fn missing(path: &Path) -> Self {
        CliError {
            code: EXIT_MISSING,
            message: format!("missing artifact {}", path.display()),
        }
    }

    /// Wraps a toolkit error raised in `stage`.
    pub fn stage(stage: &str, err: sde_opinf::Error) -> Self {
        use sde_opinf::Error;
        let code = match &err {
            Error::InvalidArgument(_) => EXIT_CONFIG,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Format(_) => EXIT_MISSING,
            _ => EXIT_NUMERICAL,
        };
        CliError {
            code,
            message: format!("{stage}: {err}"),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        if err.kind() == std::io::ErrorKind::NotFound {
            return Self::missing(path);
        }
        CliError {
            code: EXIT_NUMERICAL,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
