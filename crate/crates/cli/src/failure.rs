//! Errors carrying the process exit code.

use std::fmt;

use partldp_core::Error;

/// Exit 1: a check ran and failed.
pub const EXIT_CHECK: u8 = 1;
/// Exit 2: bad flags, unreadable or invalid configuration, invalid data.
pub const EXIT_USAGE: u8 = 2;
/// Exit 3: a numeric routine could not deliver a result.
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn check(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CHECK, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure { code: EXIT_NUMERIC, message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::usage(format!("{}: {e}", path.display()))
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Failure { code: self.code, message: format!("{what}: {}", self.message) }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // diagnostics are one line
        f.write_str(&self.message.replace('\n', " "))
    }
}

fn code_of(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::InvalidParameter(_) | Error::Resource(_) => EXIT_USAGE,
        Error::Sampling(_) | Error::Quadrature { .. } | Error::DegenerateFit(_) => EXIT_NUMERIC,
        Error::SweepAborted { source, .. } => code_of(source),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: code_of(&e), message: e.to_string() }
    }
}
