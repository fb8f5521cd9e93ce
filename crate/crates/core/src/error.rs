use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("rank deficient at {witness:?}: {detail}")]
    RankDeficient { witness: Vec<f64>, detail: String },

    #[error("operator is not large at {witness:?}")]
    NotLarge { witness: Vec<f64> },

    #[error("patch has no points")]
    EmptyPatch,

    #[error("point {index} lies on the patch boundary; the stencil needs interior points")]
    BoundaryPoint { index: usize },

    #[error("no coordinate relabeling makes the vanishing top coefficients trivial: {0}")]
    NoRelabeling(String),

    #[error("cubic does not have three distinct real roots: {0}")]
    CubicRoots(String),

    #[error("map is not in F^(s+3) on this patch: {0}")]
    NotMember(String),

    #[error("patch too coarse: Richardson ratio {ratio:.3} outside [{lo}, {hi}], refine the grid")]
    TooCoarse { ratio: f64, lo: f64, hi: f64 },

    #[error("symbolic expansion too large: {0}")]
    ExpansionTooLarge(String),

    /// Divergence or rank-margin collapse of the continuation, with the
    /// trace up to the failing step.
    #[error("continuation stopped: {}", .0.stop_reason)]
    ContinuationFailed(Box<crate::nash::ContinuationTrace>),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
