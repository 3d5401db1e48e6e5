use thiserror::Error;

/// Errors surfaced by tensor kernels, the neck, differentiation and file IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("unsupported resize from {from_h}x{from_w} to {to_h}x{to_w}: each spatial ratio must be a power of two and both axes must resize in the same direction")]
    UnsupportedResize {
        from_h: usize,
        from_w: usize,
        to_h: usize,
        to_w: usize,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tape contract violation: {0}")]
    Tape(String),

    #[error("numeric error at {coordinate}: {detail}")]
    Numeric { coordinate: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
