//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Partial function evaluated outside its domain (division by an
    /// interval containing zero, sqrt of a negative range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot bisect a zero-width box")]
    DegenerateBox,

    #[error("projection requires at least one control dimension")]
    InvalidProjection,

    #[error("origin is covered by the paving")]
    OriginCovered,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("Riccati iteration diverged; linearization not stabilizable")]
    Stabilizability,

    #[error("state {0:?} is outside the estimated domain of attraction")]
    OutOfDomain(Vec<f64>),

    #[error("trajectory left the estimated domain of attraction at step {step}: {state:?}")]
    InvarianceViolation { step: usize, state: Vec<f64> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
