use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}` (expected one of CS, FM, AD, OD, ODS)")]
    UnknownSystem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite kernel value for agents ({i}, {j}) at radius {r}")]
    NonFiniteKernel { i: usize, j: usize, r: f64 },

    #[error("non-finite covariance entry in block (row {row}, col {col})")]
    NonFiniteCovariance { row: usize, col: usize },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("matrix is ill-conditioned: Cholesky failed with jitter up to {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error("operator is not positive definite (curvature {curvature:e} at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },

    #[error("Nystrom factorization failed after shift escalation")]
    NystromFailure,

    #[error("all agents are below the speed threshold at snapshot {0}")]
    DegenerateVelocities(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteKernel { .. }
                | Error::NonFiniteCovariance { .. }
                | Error::StepSizeUnderflow { .. }
                | Error::IllConditioned { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NystromFailure
                | Error::DegenerateVelocities(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
