use thiserror::Error;

/// Errors produced by the watermarking library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("capacity exceeded: r*m = {needed} > n = {available}")]
    Capacity { needed: usize, available: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("unsupported session key width {0} (expected 8, 16, 24 or 32)")]
    SessionKeyWidth(u32),

    #[error("duplicate account id {0:?}")]
    DuplicateAccount(String),

    #[error("registry is empty")]
    EmptyRegistry,

    #[error("channel spec parse error at byte {position}: {message}")]
    ChannelSyntax { position: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
