use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CboError {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("objective value at particle {index} is not finite")]
    NonFiniteObjective { index: usize },

    #[error("non-positive value at index {index} in fitting window")]
    NonPositiveValue { index: usize },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unknown objective `{0}`")]
    UnknownObjective(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("eigensolver did not converge (residual {residual:e})")]
    EigenNonConvergence { residual: f64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = CboError> = std::result::Result<T, E>;

pub(crate) fn param_err(name: &'static str, reason: impl Into<String>) -> CboError {
    CboError::Parameter {
        name,
        reason: reason.into(),
    }
}
