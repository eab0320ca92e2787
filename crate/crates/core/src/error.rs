use thiserror::Error;

/// Errors raised by the estimators, models, and training loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model produced a non-finite log-weight for a specific draw.
    #[error("non-finite log-weight {log_f} at data index {data_index}, z = {z:?}")]
    NonFiniteWeight { data_index: usize, z: Vec<f64>, log_f: f64 },

    /// A sampled level exceeded the configured cap.
    #[error("sampled level {level} exceeds level cap {cap}")]
    LevelCap { level: u64, cap: u32 },

    /// The model does not provide the requested oracle.
    #[error("unsupported operation for model `{model}`: {operation}")]
    Unsupported {
        model: &'static str,
        operation: &'static str,
    },

    /// A parameter became non-finite after an optimizer update.
    #[error("divergence at step {step}: |grad_theta| = {grad_norm_theta}, |grad_phi| = {grad_norm_phi}")]
    Divergence {
        step: usize,
        grad_norm_theta: f64,
        grad_norm_phi: f64,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Runtime failures (divergence, resource guard, bad weights) as opposed
    /// to usage errors.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteWeight { .. } | Error::LevelCap { .. } | Error::Divergence { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
