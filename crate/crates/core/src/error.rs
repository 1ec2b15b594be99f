use thiserror::Error;

/// Errors raised by the sampler library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is singular (|det| = {det:e})")]
    Singular { det: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("ODE solver failed: {0}")]
    SolverFailure(String),

    #[error("invalid process specification: {0}")]
    InvalidSpec(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("degenerate covariance in mixture component {component} at t = {t}")]
    DegenerateCovariance { component: usize, t: f64 },

    #[error("output scaling is singular at t = {t}")]
    SingularCOut { t: f64 },

    #[error("coefficient A is singular at t = {t}")]
    SingularA { t: f64 },

    #[error("Adams-Bashforth order {order} needs {needed} past evaluations, have {have}")]
    InsufficientHistory { order: usize, needed: usize, have: usize },

    #[error("sampler {0} needs a coefficient table")]
    MissingTable(String),

    #[error("sampler {kind} does not support the {process} process")]
    UnsupportedProcess { kind: String, process: String },

    #[error("bad schedule range: {0}")]
    BadRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for command-line front ends.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidSpec(_)
            | Error::InvalidMixture(_)
            | Error::BadRange(_)
            | Error::DimensionMismatch { .. }
            | Error::UnsupportedProcess { .. } => 2,
            Error::Io(_) => 3,
            Error::Singular { .. }
            | Error::NotSpd(_)
            | Error::QuadratureFailure(_)
            | Error::SolverFailure(_)
            | Error::DegenerateCovariance { .. }
            | Error::SingularCOut { .. }
            | Error::SingularA { .. } => 4,
            Error::InsufficientHistory { .. } | Error::MissingTable(_) => 5,
        }
    }
}
