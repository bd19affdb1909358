//! Crate-wide error type and process exit-code mapping.

use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad flags, bad filter band, unknown scheme, ...
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed on-disk data (bad magic, version, truncation).
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Structural mismatch between components (shapes, head width vs scheme, ...).
    #[error("structural error: {0}")]
    Shape(String),

    /// Training produced non-finite values.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// Input rejected by a precondition (too short, too few samples, no peaks).
    #[error("rejected: {0}")]
    Rejection(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code category: 1 configuration, 2 data format/structure,
    /// 3 numerical divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Rejection(_) => 1,
            Error::Format { .. } | Error::Shape(_) => 2,
            Error::Divergence(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_match_categories() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(
            Error::Format {
                offset: 0,
                message: "m".into()
            }
            .exit_code(),
            2
        );
        assert_eq!(Error::Shape("x".into()).exit_code(), 2);
        assert_eq!(Error::Divergence("x".into()).exit_code(), 3);
        assert_eq!(
            Error::Io(std::io::Error::new(std::io::ErrorKind::Other, "x")).exit_code(),
            4
        );
    }
}
