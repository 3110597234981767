use thiserror::Error;

/// Errors raised by the model, simulation, fitting and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the formula (negative radius, zero atoms, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration (mismatched beam waists, invalid fit setup, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The azimuthal phase is undefined on the vortex axis.
    #[error("singularity: {0}")]
    Singularity(String),

    /// Two values that must describe the same object do not.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
