use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mask value {value} outside [0, 1]")]
    InvalidMask { value: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("reference signal has zero energy")]
    InvalidReference,
    #[error("initialization error: {0}")]
    Init(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("model has no AED head")]
    MissingHead,
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidInput(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape_err;
