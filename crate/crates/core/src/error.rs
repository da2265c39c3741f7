use thiserror::Error;

/// Errors raised while assembling or solving a transport problem.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("inconsistent basis: {0}")]
    InconsistentBasis(String),

    #[error("constraint inconsistent with marginals (column {column}, reprojection residual {residual:.3e})")]
    ConstraintInconsistent { column: String, residual: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("objective overflow at eps={eps}")]
    Overflow { eps: f64 },

    #[error("Hessian indefinite (numerical)")]
    HessianIndefinite,

    #[error("initial condition failed: {0}")]
    InitialConditionFailed(String),

    #[error("ODE stalled at eps={eps}")]
    OdeStalled { eps: f64 },

    #[error("envelope precondition violated: stationarity residual {residual:.3e}")]
    EnvelopePrecondition { residual: f64 },

    #[error("closed form valid only for unconstrained two-marginal problems")]
    ClosedFormUnsupported,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid weight path at eps={eps}: {reason}")]
    InvalidWeightPath { eps: f64, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("scalar root search failed for constraint column {column}")]
    RootNotBracketed { column: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
