use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A kernel or likelihood evaluation produced a non-finite value, or a
    /// factorization failed even after jitter escalation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Conditioning on a coordinate whose total variance is zero.
    #[error("degenerate conditioning at index {index} (total variance {variance:e})")]
    DegenerateConditioning { index: usize, variance: f64 },

    /// The lower-level Hessian is not invertible at the inner optimum.
    #[error("singular lower-level hessian (condition number {condition:e})")]
    SingularHessian { condition: f64 },

    /// Bad arguments or configuration supplied by the caller.
    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
