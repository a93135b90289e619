use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hurwitz (max real eigenvalue part {max_real_part:e})")]
    NotHurwitz { max_real_part: f64 },
    #[error("linear system is singular or rank-deficient: {0}")]
    Singular(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("block weights are degenerate: xi_u = {xi_u}, xi_v = {xi_v}")]
    DegenerateWeights { xi_u: f64, xi_v: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("chain is reducible: no unique stationary distribution")]
    Reducible,
    #[error("chain is periodic: k-step laws do not converge")]
    Periodic,
    #[error("chain does not mix to within {delta:e} in {max_steps} steps")]
    NonMixing { delta: f64, max_steps: usize },
    #[error("steady-state A_vv is singular (condition number {0:e})")]
    SingularAvv(f64),
    #[error("steady-state system matrix is singular (condition number {0:e})")]
    SingularSystem(f64),
    #[error("instance generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("no kappa2 <= 1e12 certifies the eigenvalue bound on (0, {mu_max}]")]
    NoValidKappa2 { mu_max: f64 },
    #[error("unstable regime: {0}")]
    UnstableRegime(String),
    #[error("drift condition violated: {0}")]
    ConditionViolated(String),
    #[error("insufficient points for a slope: need at least 2, got {0}")]
    InsufficientPoints(usize),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("configs cannot be paired: {0}")]
    MismatchedConfigs(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
