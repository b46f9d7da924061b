use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the calibration engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A covariance matrix failed Cholesky factorization even after the ridge was added.
    #[error("covariance of component {component} is not positive definite")]
    SingularCovariance { component: usize },

    #[error("insufficient data: need at least {needed} vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid estimate: {0}")]
    InvalidEstimate(String),

    #[error("brute-force assignment supports at most {max} classes, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("label {label} out of range for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("boundary sweep requires a binary task, got {0} classes")]
    BinaryOnly(usize),
}
