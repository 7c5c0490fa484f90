use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on shapes, indices or parameter values was violated.
    InvalidArgument(String),
    /// A matrix that must be inverted has a pivot below the singularity threshold.
    SingularMatrix { pivot: f64 },
    /// An exhaustive search would exceed the configured budget.
    Capacity { required: u128, limit: u128 },
    /// Training produced a non-finite loss.
    NonFinite { iteration: usize, batch_seed: u64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::SingularMatrix { pivot } => {
                write!(f, "singular matrix: pivot {pivot:e} below threshold")
            }
            Error::Capacity { required, limit } => {
                write!(f, "search space of {required} exceeds limit {limit}")
            }
            Error::NonFinite {
                iteration,
                batch_seed,
            } => write!(
                f,
                "non-finite loss at iteration {iteration} (batch seed {batch_seed})"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
