//! Error type shared by every module in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Structured errors for simulation, parsing, and validation failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor or parameter dimensions do not line up.
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// An argument violated a documented precondition.
    InvalidParameter { context: &'static str, detail: String },
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: &'static str },
    /// Binary input did not match the expected IDX layout.
    Format { detail: String },
    /// A protocol-level contract was broken (empty update list, layout drift).
    Protocol { stage: &'static str, detail: String },
}

impl Error {
    pub fn invalid(context: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            context,
            detail: detail.into(),
        }
    }

    pub fn protocol(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Protocol {
            stage,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                expected,
                found,
            } => write!(
                f,
                "shape mismatch in {context}: expected {expected:?}, found {found:?}"
            ),
            Error::InvalidParameter { context, detail } => {
                write!(f, "invalid parameter in {context}: {detail}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Format { detail } => write!(f, "format error: {detail}"),
            Error::Protocol { stage, detail } => {
                write!(f, "protocol error in stage `{stage}`: {detail}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
