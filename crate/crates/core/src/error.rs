use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at byte {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{check} exceeded tolerance: residual {residual:e} > {tol:e}")]
    ToleranceExceeded { check: String, residual: f64, tol: f64 },
    #[error("precondition violated: {hypothesis} (residual {residual:e})")]
    PreconditionViolated { hypothesis: String, residual: f64 },
    #[error("pairing is singular (smallest singular value {0:e})")]
    SingularPairing(f64),
    #[error("linear system inconsistent: residual {0:e}")]
    Inconsistent(f64),
    #[error("energy is only defined for autonomous systems")]
    NotAutonomous,
    #[error("rank not constant across samples: {0:?}")]
    RankNotConstant(Vec<usize>),
    #[error("no sample lies on the constraint surface")]
    EmptySurface,
    #[error("kernel field not in the kernel of g: residual {0:e}")]
    NotInKernel(f64),
    #[error("shape mismatch in {what}: expected {expected}, got {found}")]
    ShapeMismatch { what: String, expected: String, found: String },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("degenerate at sample {sample}: smallest singular value {sigma_min:e}")]
    DegenerateAtSample { sample: usize, sigma_min: f64 },
    #[error("not coisotropic at sample {sample}: residual {residual:e}, orthogonal dimension {dimension}")]
    NotCoisotropic { sample: usize, residual: f64, dimension: usize },
    #[error("singular Hessian at t = {time}: smallest singular value {sigma_min:e}")]
    SingularHessianAlongTrajectory { time: f64, sigma_min: f64 },
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
