use thiserror::Error;

/// Errors raised by the design and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pole on the imaginary axis at omega = {omega}")]
    PoleOnAxis { omega: f64 },

    #[error("degenerate transfer function: {0}")]
    Degenerate(String),

    #[error("improper transfer function: numerator degree {num_degree} exceeds denominator degree {den_degree}")]
    Improper { num_degree: usize, den_degree: usize },

    #[error("singular bilinear mapping: continuous pole at s = {0}")]
    SingularMapping(f64),

    #[error("denominator must be normalized so that b(0) = 1 (found {0})")]
    NotNormalized(f64),

    #[error("frequency {freq} Hz is above the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { freq: f64, nyquist: f64 },

    #[error("taps are not symmetric; filter is not linear phase")]
    NotLinearPhase,

    #[error("infeasible filter specification: {0}")]
    InfeasibleSpec(String),

    #[error("unstable filter: pole magnitude {max_pole_magnitude} >= 1")]
    Unstable { max_pole_magnitude: f64 },

    #[error("function is not finite at domain sample {x}")]
    DomainSingularity { x: f64 },

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
