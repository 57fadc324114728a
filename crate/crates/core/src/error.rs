use alloc::string::String;
use core::fmt;

/// Errors surfaced by the training core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An array or matrix dimension does not match what the operation needs.
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// The replay buffer holds fewer transitions than the requested batch.
    InsufficientData { have: usize, need: usize },
    /// A non-finite value (NaN or infinity) appeared where the math requires
    /// finite input.
    NonFinite { context: &'static str },
    /// A configuration value violates its documented constraints.
    InvalidConfig(String),
    /// `step` was called on an episode that already ended.
    EpisodeOver,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
            Error::InsufficientData { have, need } => {
                write!(f, "replay buffer holds {have} transitions, need {need}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::EpisodeOver => write!(f, "step called on a finished episode"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
