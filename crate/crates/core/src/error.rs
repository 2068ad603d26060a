use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Heading cannot be extracted from a velocity whose norm is at or below the threshold.
    #[error("speed {speed:e} m/s is at or below {threshold:e} m/s, heading is undefined")]
    DegenerateSpeed { speed: f64, threshold: f64 },

    /// Innovation covariance is numerically singular.
    #[error("innovation covariance is singular (condition number {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
