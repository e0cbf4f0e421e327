use std::fmt;
use std::path::Path;

use entrodrop_core::Error;

/// A failed run and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or flag values: exit 2.
    Usage(String),
    /// Unreadable, unwritable or malformed files: exit 3.
    Io(String),
    /// Valid input the operation cannot serve: exit 4.
    Domain(String),
}

impl Failure {
    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Failure::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Domain(_) => 4,
        }
    }

    /// Prefixes the message with what was being done.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            Failure::Usage(m) => Failure::Usage(format!("{what}: {m}")),
            Failure::Io(m) => Failure::Io(format!("{what}: {m}")),
            Failure::Domain(m) => Failure::Domain(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Domain(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_io_like() {
            return Failure::Io(msg);
        }
        match e {
            Error::Contract(_) | Error::Input(_) => Failure::Usage(msg),
            _ => Failure::Domain(msg),
        }
    }
}
