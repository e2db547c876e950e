use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("payoff ordering violated: {inequality} does not hold")]
    OrderingViolation { inequality: &'static str },

    #[error("payoff {name} is not finite")]
    NonFinitePayoff { name: &'static str },

    #[error("loner payoff L is {0}")]
    LonerPayoff(&'static str),

    #[error("{what} = {value} is outside [0, 1]")]
    Domain { what: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("frequencies violate the simplex constraint: {0}")]
    Simplex(String),

    #[error("invalid environment coupling: {0}")]
    Coupling(String),

    #[error("closed form {form} does not apply: {reason}")]
    FormMismatch { form: &'static str, reason: &'static str },

    #[error("invalid integrator configuration: {0}")]
    IntegratorConfig(String),

    #[error("step limit of {max_steps} exceeded at t = {t}")]
    StepLimitExceeded { max_steps: usize, t: f64 },

    #[error("vector field returned a non-finite value at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("no analytic Jacobian is available for this system")]
    AnalyticUnavailable,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("trajectory is empty")]
    EmptyTrajectory,
}
