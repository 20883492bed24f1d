use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("parameter {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("basis index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("derivative order {0} not supported")]
    DerivativeOrder(usize),
    #[error("non-positive weight {0}")]
    NonPositiveWeight(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid cell box: {0}")]
    InvalidBox(String),
    #[error("level {level} out of range (max {max})")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("refinement depth limit {0} reached")]
    DepthLimit(usize),
    #[error("degenerate geometry: det J = {det:e} at {xi:?}")]
    DegenerateGeometry { det: f64, xi: [f64; 3] },
    #[error("point {0:?} outside the parametric domain")]
    PointOutside([f64; 3]),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("CG did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown case '{0}'")]
    UnknownCase(String),
    #[error("case '{case}' failed its consistency check: residual {residual:e}")]
    InconsistentCase { case: String, residual: f64 },
    #[error("exact solution not available for case '{0}'")]
    NoExactSolution(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
