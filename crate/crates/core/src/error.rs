use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cannot parse number literal `{0}`")]
    Parse(String),

    #[error("target too large: t/n = {ratio} must be < 1")]
    TargetTooLarge { ratio: f64 },

    #[error("fragment explosion: {count} fragments exceeds the limit {limit}")]
    FragmentExplosion { count: usize, limit: usize },

    #[error("ill-conditioned system: condition number {cond:.3e} exceeds {limit:.1e}")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("mass underflow after {step} steps")]
    Underflow { step: usize },

    #[error("pmf mass {mass} below 1 - {tol}; increase k_max")]
    InsufficientMass { mass: f64, tol: f64 },

    #[error("negative mass {value} at k = {k}")]
    NegativeMass { k: usize, value: f64 },

    #[error("zero-measure denominator in {0}")]
    ZeroMeasure(&'static str),

    #[error("inconsistent overlap parameters: {0}")]
    ImpossibleCase(String),

    #[error("scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
