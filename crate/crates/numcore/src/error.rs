use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    Shape { op: &'static str, detail: String },
    /// An argument is outside its admissible range.
    InvalidArgument { op: &'static str, detail: String },
    /// `backward` was called on a tensor with more than one element.
    NonScalarLoss { shape: Vec<usize> },
    /// `backward` was called twice on the same tape.
    TapeConsumed,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArgument { op, detail } => write!(f, "{op}: invalid argument: {detail}"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::TapeConsumed => write!(f, "tape has already been consumed by a backward pass"),
        }
    }
}

impl std::error::Error for Error {}
