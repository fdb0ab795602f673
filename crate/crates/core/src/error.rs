use thiserror::Error;

/// Errors raised by the closed-form model, the solver and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// An argument lies outside the domain of the quantity being evaluated.
    #[error("{what} is out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    /// The expression is singular at the given input (e.g. the rent factor at zero effort).
    #[error("singular input: {0}")]
    Singular(&'static str),

    /// Positive effort was requested with a zero discount factor.
    #[error("positive effort cannot be enforced when delta = 0")]
    InfeasibleEnforcement,

    /// A domain type violates one of its invariants.
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },

    /// The caller supplied an unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        ModelError::Domain { what, value }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
