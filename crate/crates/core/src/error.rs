use alloc::string::String;
use core::fmt;

use crate::tensor::TensorError;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    Tensor(TensorError),
    /// A configuration field holds an unusable value.
    Config { field: &'static str, reason: String },
    /// A size exceeds a fixed capacity (one-hot pool, oracle limit, ...).
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },
    /// Malformed solution or input, e.g. a tour that is not a permutation.
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Tensor(e) => write!(f, "{e}"),
            Error::Config { field, reason } => write!(f, "invalid config field `{field}`: {reason}"),
            Error::Capacity {
                what,
                requested,
                limit,
            } => write!(f, "{what}: {requested} exceeds capacity {limit}"),
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        Error::Tensor(e)
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
