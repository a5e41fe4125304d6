use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{family} does not support {stages} stages")]
    UnsupportedStageCount { family: &'static str, stages: usize },

    #[error("LDU factorization of the Butcher matrix failed: zero pivot at stage {stage}")]
    SingularFactorization { stage: usize },

    #[error("Butcher matrix of {0} is not invertible")]
    SingularTableau(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sparse block is singular (pivot {pivot:.3e} at row {row})")]
    SingularBlock { row: usize, pivot: f64 },

    #[error("FGMRES did not converge in {iterations} iterations (residual {:.3e})", history.last().copied().unwrap_or(f64::NAN))]
    KrylovNonConvergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("Newton did not converge in {iterations} iterations (residual {:.3e})", history.last().copied().unwrap_or(f64::NAN))]
    NewtonDivergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("incompatible formulation: {0}")]
    Formulation(String),

    #[error("ODE-type boundary conditions need the time derivative of the boundary data")]
    MissingBoundaryDerivative,

    #[error("degree of freedom {dof} out of range for dimension {dim}")]
    DofOutOfRange { dof: usize, dim: usize },

    #[error("problem has no linear (M, K, f) representation")]
    NotLinear,

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("step {completed_steps} failed: {source}")]
    StepFailed {
        completed_steps: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix market: {0}")]
    MatrixMarket(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
