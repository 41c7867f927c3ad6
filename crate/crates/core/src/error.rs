use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The Gram matrix has an eigenvalue below the relative floor.
    #[error("singular Gram matrix: smallest eigenvalue {min_eig:e} vs largest {max_eig:e}")]
    SingularGram { min_eig: f64, max_eig: f64 },

    #[error("grid search minimizer lies on the box boundary; enlarge the box")]
    MinimizerOnBoundary,

    #[error("E|psi(e + t)| diverges for this loss and error distribution")]
    NonIntegrable,

    #[error("need at least {needed} sample sizes, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("empty grid")]
    EmptyGrid,

    #[error("variables are not bounded: {0}")]
    UnboundedSpec(String),

    #[error("weights violate max|a_ni| = O(1/n): n*max|a_ni| grows with log-log slope {slope:.3}")]
    WeightTooLarge { slope: f64 },

    #[error("direction must have unit norm, got norm {0}")]
    NonUnitDirection(f64),

    #[error("quadrature did not reach tolerance: estimate {value:e}, error {error:e}")]
    QuadratureFailed { value: f64, error: f64 },
}
