use thiserror::Error;

/// Why a search for the tail exponent found no root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoRootReason {
    /// κ′(1⁻) ≥ 0: the cascade is degenerate and no exponent above 1 exists.
    DerivativeNonnegative,
    /// κ(s)·E[N] stays below one on the whole scan range.
    KappaStaysBelow,
    /// κ(1)·E[N] ≠ 1.
    NotCalibrated,
}

impl std::fmt::Display for NoRootReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::DerivativeNonnegative => "derivative_nonnegative",
            Self::KappaStaysBelow => "kappa_stays_below",
            Self::NotCalibrated => "not_calibrated",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("point must lie in the interior of the cone")]
    InteriorRequired,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {path} {message}")]
    InvalidModel { path: String, message: String },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension {0} unsupported (grid supports 2..=6)")]
    DimensionUnsupported(usize),
    #[error("grid resolution {0} too small")]
    ResolutionTooSmall(usize),
    #[error("atom {atom} maps grid direction {point} to zero")]
    ZeroImage { atom: usize, point: usize },
    #[error("eigenfunction not strictly positive (min {min:e}); ensemble likely reducible")]
    NonPositiveEigenfunction { min: f64 },
    #[error("dual and primal κ disagree: {dual} vs {primal}")]
    DualMismatch { dual: f64, primal: f64 },
    #[error("no root for κ(s)·E[N] = 1 above s = 1: {reason}; scan: {trace:?}")]
    NoRoot {
        reason: NoRootReason,
        trace: Vec<(f64, f64)>,
    },
    #[error("work cap exceeded: {0}")]
    WorkCapExceeded(String),
    #[error("ensemble not calibrated: r(m)·E[N] = {0}")]
    NotCalibrated(f64),
    #[error("pool too small: {got} particles, need at least {need}")]
    PoolTooSmall { got: usize, need: usize },
    #[error("tail analysis requires constant branching")]
    NonConstantBranching,
    #[error("degenerate tail: top order statistics are all equal")]
    DegenerateTail,
    #[error("too few samples: need {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least {need} directions, got {got}")]
    InsufficientDirections { need: usize, got: usize },
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
