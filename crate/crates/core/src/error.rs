use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad argument: shape mismatch, empty input, out-of-range index.
    Argument(String),
    /// A metapath hop does not chain onto the previous one.
    Composition { hop: usize, reason: String },
    /// Graph violates one of its structural invariants.
    InvalidGraph(String),
    /// A NaN or infinity escaped an operation.
    NonFinite { op: String },
    /// Operation called in the wrong state (double backward, missing bookkeeping).
    State(String),
    /// Configuration cannot be used.
    Config(String),
    /// Metric undefined for the given input (e.g. AUC with one class).
    UndefinedMetric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(m) => write!(f, "invalid argument: {m}"),
            Error::Composition { hop, reason } => {
                write!(f, "metapath composition failed at hop {hop}: {reason}")
            }
            Error::InvalidGraph(m) => write!(f, "invalid graph: {m}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::State(m) => write!(f, "invalid state: {m}"),
            Error::Config(m) => write!(f, "invalid configuration: {m}"),
            Error::UndefinedMetric(m) => write!(f, "metric undefined: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! arg_err {
    ($($t:tt)*) => { $crate::Error::Argument(alloc::format!($($t)*)) };
}
pub(crate) use arg_err;
