use thiserror::Error;

/// Errors surfaced by solver and field operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("Newton iteration failed to converge at step {step} (residual {residual:.3e})")]
    NonConvergence { step: usize, residual: f64 },

    #[error("linear solve failed at step {step}")]
    LinearSolveFailure { step: usize },

    #[error("dense assembly size guard exceeded: {size} > {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("projection did not converge within {iters} iterations (change {change:.3e})")]
    ProjectionNonConvergence { iters: usize, change: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
