use thiserror::Error;

/// Errors raised by the model geometry and everything built on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("metric singular at stratum (horn factor {factor} is on its boundary)")]
    SingularAtStratum { factor: usize },

    #[error("metric is not positive definite at this point")]
    NotPositiveDefinite,

    #[error("curvature undefined for factor {factor}: {reason}")]
    CurvatureUndefined { factor: usize, reason: String },

    #[error("geodesic integration failed after {steps} steps at arclength {arclength}: {reason}")]
    IntegrationFailure {
        steps: usize,
        arclength: f64,
        reason: String,
        last_state: Vec<f64>,
    },

    /// The boundary-value solver exhausted its budget. `best_length` is the
    /// length of the best admissible path found, an upper bound on the distance.
    #[error("geodesic solver did not converge; best path length {best_length} is an upper bound")]
    NoConvergence {
        best_length: f64,
        lower_bound: f64,
        best_path: Vec<Vec<f64>>,
    },

    #[error("invalid isometry: {0}")]
    InvalidIsometry(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("heat flow left the basin: {0}")]
    BasinViolation(String),

    #[error("classification precondition failed: {0}")]
    Precondition(String),

    #[error("argument out of domain: {0}")]
    OutOfDomain(String),

    #[error("quadrature did not converge under grid doubling (coarse {coarse}, fine {fine})")]
    QuadratureNotConverged { coarse: f64, fine: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

impl From<serde_json::Error> for GeometryError {
    fn from(e: serde_json::Error) -> Self {
        GeometryError::Serialization(e.to_string())
    }
}

impl From<csv::Error> for GeometryError {
    fn from(e: csv::Error) -> Self {
        GeometryError::Serialization(e.to_string())
    }
}
