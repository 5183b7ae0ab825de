use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A Jacobian (or any square matrix) too close to singular to take its
    /// log-determinant or inverse.
    #[error("singular Jacobian (|det| = {det:e}, condition estimate = {condition:e})")]
    SingularJacobian { det: f64, condition: f64 },

    #[error("non-finite value in {what} at coordinate {index}")]
    NonFinite { what: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("primitive `{0}` has no derivative")]
    UnsupportedPrimitive(&'static str),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("quadrature mass deficit {deficit:e} exceeds tolerance; widen the grid")]
    QuadratureDeficit { deficit: f64 },

    #[error("column {column} of {matrix} is constant (zero rank variance)")]
    ConstantColumn { matrix: &'static str, column: usize },

    #[error("singular Jacobian at point {index}: {source}")]
    AtPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A loss term became non-finite during training.
    #[error("non-finite {term} at iteration {iteration}")]
    Diverged { iteration: usize, term: String },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
