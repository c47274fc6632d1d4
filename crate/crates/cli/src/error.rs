use std::fmt;
use std::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// A failed command: exit code 2 for bad input, 3 for everything else.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USER,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<burrow::Error> for CliError {
    fn from(err: burrow::Error) -> Self {
        use burrow::Error as E;
        match &err {
            E::GraphCorruption(_) | E::Storage(_) => Self::internal(err.to_string()),
            E::Io(io) if io.kind() != io::ErrorKind::NotFound => Self::internal(err.to_string()),
            _ => Self::user(err.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        match err.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied | io::ErrorKind::InvalidData => {
                Self::user(err.to_string())
            }
            _ => Self::internal(err.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
