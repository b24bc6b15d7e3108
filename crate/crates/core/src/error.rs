use thiserror::Error;

/// Errors raised by the engine.
///
/// A missing equilibrium is not an error: solvers report it as a value.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid config: `{field}` {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid rate {0}: must satisfy 0 <= r < 1")]
    InvalidRate(f64),

    /// `p * lgd >= 1`: no finite rate covers the expected loss.
    #[error("unpriceable: p = {p}, lgd = {lgd} gives p*lgd >= 1")]
    Unpriceable { p: f64, lgd: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
