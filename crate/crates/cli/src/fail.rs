//! Failure classes and their exit codes.

use std::fmt;

use terraseg::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Malformed command line: unknown flag, missing required flag.
    Usage,
    /// Input file or directory missing or unreadable; output not writable.
    Io,
    /// Invalid or conflicting configuration values.
    Config,
    /// Input data present but malformed or unusable.
    Data,
    /// Training produced a non-finite loss or gradient.
    Divergence,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Config => 4,
            Kind::Data => 5,
            Kind::Divergence => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Divergence => "divergence",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Kind::Io, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Kind::Data, message)
    }
}

impl fmt::Display for Failure {
    /// One line: `error: code=<name> message=<text>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.replace(['\n', '\r'], " ");
        write!(f, "error: code={} message={flat}", self.kind.name())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Io { .. } => Kind::Io,
            Error::Divergence { .. } => Kind::Divergence,
            _ => Kind::Data,
        };
        Failure::new(kind, e.to_string())
    }
}
