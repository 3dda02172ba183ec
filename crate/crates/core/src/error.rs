use thiserror::Error;

pub type Result<T> = std::result::Result<T, GrsdError>;

#[derive(Debug, Error)]
pub enum GrsdError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },

    #[error("asymmetry {asymmetry:e} exceeds tolerance {tol:e}")]
    AsymmetryExceedsTol { asymmetry: f64, tol: f64 },

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("no retained eigenvalue falls inside the analysis window")]
    EmptyWindow,

    #[error("invalid log-bin grid: {0}")]
    InvalidGrid(String),

    #[error("incoherence profile cannot be realized: {0}")]
    InfeasibleProfile(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("recurrence violates the stability bound: measured {measured:e} > allowed {allowed:e} at lag {lag}")]
    UnstableSsm { measured: f64, allowed: f64, lag: usize },

    #[error("trajectory diverged at t = {time}")]
    DivergedTrajectory {
        time: f64,
        partial: Box<crate::gradient_flow::Trajectory>,
    },

    #[error("non-finite gradient at t = {time}")]
    NonFiniteGradient { time: f64 },

    #[error("sample {index} is a trajectory endpoint; central difference unavailable")]
    BoundarySample { index: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("every bin density is below the floor")]
    AllBinsBelowFloor,

    #[error("need at least {needed} in-window samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("velocities change sign inside the fit window")]
    MixedSignVelocities,

    #[error("shifted evaluation points fall outside the sampled field")]
    RangeExceeded,

    #[error("weighted incoherence sum is not finite")]
    DivergentWeightedSum,

    #[error("bin pair has no eigenvalue population: {0}")]
    EmptyBinPair(String),

    #[error("direction collapsed to zero at layer {layer}")]
    ZeroVectorEncountered { layer: usize },

    #[error("increment variance {0:e} is degenerate")]
    DegenerateVariance(f64),

    #[error("mixing proxy did not reach {eta} within {budget} layers")]
    NotMixedWithinBudget { eta: f64, budget: usize },

    #[error("tolerance eta = {eta} violates the depth-threshold invariant: {reason}")]
    InvalidTolerance { eta: f64, reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("layer reports use different grids or windows")]
    GridMismatch,

    #[error("{condition}: {source}")]
    Condition {
        condition: &'static str,
        #[source]
        source: Box<GrsdError>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GrsdError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        GrsdError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn labelled(self, condition: &'static str) -> Self {
        GrsdError::Condition {
            condition,
            source: Box::new(self),
        }
    }
}
