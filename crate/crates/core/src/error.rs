use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer dimensions {0:?}: need at least 3 positive entries")]
    InvalidLayerDims(Vec<usize>),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite loss or gradient at sample {sample:?}")]
    NonFiniteLoss { sample: Option<usize> },

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("linear solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("invalid grid size {0}: need at least 3 interior points per axis")]
    InvalidGrid(usize),

    #[error("training diverged: non-finite loss at iteration {iteration}")]
    TrainingDiverged { iteration: usize },

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("noise standard deviation must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("initial state {0:?} has non-finite log-posterior")]
    InvalidInitialState(Vec<f64>),

    #[error("backend failed at iteration {iteration}: {source}")]
    Backend {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("refinement exhausted {iterations} descent steps at z* = {candidate:?}; checkpoint residual {residual:e}")]
    RefinementExhausted {
        candidate: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("missing input file {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name, used in the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidLayerDims(_) => "invalid-layer-dims",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::OutsideDomain { .. } => "outside-domain",
            Error::SolverDiverged { .. } => "solver-diverged",
            Error::InvalidGrid(_) => "invalid-grid",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::NotPositiveDefinite => "not-positive-definite",
            Error::InvalidSigma(_) => "invalid-sigma",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::InvalidInitialState(_) => "invalid-initial-state",
            Error::Backend { source, .. } => source.kind(),
            Error::RefinementExhausted { .. } => "refinement-exhausted",
            Error::Malformed { .. } => "malformed",
            Error::MissingInput(_) => "missing-input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
