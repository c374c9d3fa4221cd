use thiserror::Error;

pub type Result<T, E = HjbError> = std::result::Result<T, E>;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HjbError {
    #[error("non-finite value in {context} at t = {at}")]
    NonFiniteValue { context: &'static str, at: f64 },
    #[error("gimbal singularity: pitch {pitch} too close to ±π/2")]
    GimbalSingularity { pitch: f64 },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("integration exceeded {steps} steps at t = {t}")]
    TooManySteps { steps: usize, t: f64 },
    #[error("integration aborted by monitor at t = {t}")]
    Aborted { t: f64 },
    #[error("Newton iteration stalled after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("singular Jacobian")]
    SingularJacobian,
    #[error("mesh limit exceeded ({points} points)")]
    MeshLimitExceeded { points: usize },
    #[error("continuation failed; horizon reached t = {reached}")]
    ContinuationFailed { reached: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("all {attempted} solves failed")]
    AllSolvesFailed { attempted: usize },
    #[error("objective unbounded")]
    Unbounded,
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("all candidates failed")]
    AllCandidatesFailed,
    #[error("shock detected: {0}")]
    ShockDetected(String),
    #[error("no characteristic reaches the target point")]
    NoCharacteristicFound,
    #[error("Newton iteration for LGL nodes failed at order {order}")]
    NewtonFailure { order: usize },
    #[error("infeasible at maximum penalty (max defect {defect:e})")]
    InfeasibleAtMaxPenalty { defect: f64 },
    #[error("backward dataset rejected: {disagreements} of {checked} checks disagree")]
    DatasetRejected { checked: usize, disagreements: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for HjbError {
    fn from(e: std::io::Error) -> Self {
        HjbError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HjbError {
    fn from(e: serde_json::Error) -> Self {
        HjbError::Parse(e.to_string())
    }
}
