use thiserror::Error;

/// Violations of a documented precondition (dimensions, parameter ranges).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("problem outside design envelope: {0}")]
    Envelope(String),
    #[error("truncated safe set with gamma = {gamma} appears to be empty")]
    EmptySafeSet { gamma: f64 },
}

impl ContractError {
    pub(crate) fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        ContractError::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(
    what: &'static str,
    expected: usize,
    got: usize,
) -> Result<(), ContractError> {
    if expected == got {
        Ok(())
    } else {
        Err(ContractError::Dimension {
            what,
            expected,
            got,
        })
    }
}
