use alloc::string::String;
use core::fmt;

/// Errors shared by the numerical operations in this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on the inputs was violated (shape mismatch, empty
    /// mask, out-of-range parameter, ...).
    InvalidArgument(String),
    /// The inputs are formally valid but numerically degenerate for the
    /// requested operation (constant background, no valid scan lines, ...).
    Degenerate(String),
    /// A computation produced a non-finite value.
    NonFinite(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
