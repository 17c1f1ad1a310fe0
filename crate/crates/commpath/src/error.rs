use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("component {index} is not hermitian: defect {defect:.3e} exceeds {tol:.3e}")]
    NotHermitian { index: usize, defect: f64, tol: f64 },

    #[error("component {index} is not normal: defect {defect:.3e} exceeds {tol:.3e}")]
    NotNormal { index: usize, defect: f64, tol: f64 },

    #[error("tuple is not pairwise commuting: residual {residual:.3e} exceeds {tol:.3e}")]
    NotCommuting { residual: f64, tol: f64 },

    #[error("component {index} has norm {norm} exceeding 1 beyond tolerance")]
    NormExceedsOne { index: usize, norm: f64 },

    #[error("arity must be even for a juncture, got {0}")]
    OddArity(usize),

    #[error("grid spacing parameter must satisfy 0 < delta <= 1, got {0}")]
    GridParam(f64),

    #[error("iteration failed to converge: achieved residual {achieved:.3e}, target {target:.3e}")]
    ConvergenceFailure { achieved: f64, target: f64 },

    #[error("projector exchange requires ||P - Q|| < 1, got {0}")]
    ProjectorsTooFar(f64),

    #[error(
        "correction precondition violated: projector {index} defect {defect:.3e} \
         is not below 1/(sqrt(2) N) = {threshold:.3e}"
    )]
    CorrectionPrecondition { index: usize, defect: f64, threshold: f64 },

    #[error("unitary logarithm: eigenvalue phase {phase} outside principal range (-pi/2, pi/2)")]
    PhaseOutOfRange { phase: f64 },

    #[error("budget infeasible: {reason} (achieved delta {delta:.3e}, nu {nu:.3e})")]
    BudgetInfeasible { reason: String, delta: f64, nu: f64 },

    #[error("point {0:?} is too far from the manifold (distance {1:.3e})")]
    OffManifold(Vec<f64>, f64),

    #[error("no chart covers the point {0:?}")]
    ChartCoverage(Vec<f64>),

    #[error("unsupported atlas kind: {0}")]
    UnsupportedAtlas(String),

    #[error("path endpoints disagree at the junction: distance {0:.3e}")]
    EndpointMismatch(f64),

    #[error("path parameter {0} outside [0, 1]")]
    ParamOutOfRange(f64),

    #[error("empty point set")]
    EmptySet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI: usage/schema errors exit 2,
    /// everything else (certified failures are handled separately) exits 2
    /// as well unless mapped by the caller.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

pub type Result<T> = std::result::Result<T, Error>;
