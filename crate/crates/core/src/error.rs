use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("chain has no joints")]
    Empty,
    #[error("joint config has {got} values, chain has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {joint}: axis norm {norm} is not 1")]
    InvalidAxis { joint: usize, norm: f64 },
    #[error("joint {joint}: limit [{min}, {max}] is empty")]
    InvalidLimit { joint: usize, min: f64, max: f64 },
    #[error("expected {expected} link radii, got {got}")]
    LinkRadii { expected: usize, got: usize },
    #[error("link {link}: radius must be positive")]
    NonPositiveRadius { link: usize },
    #[error("failed to parse chain definition: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read chain definition: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("no convergence after {iterations} iterations (position error {position_error:.3e} m, orientation error {orientation_error:.3e} rad)")]
    NoConvergence {
        iterations: usize,
        position_error: f64,
        orientation_error: f64,
    },
    #[error("target unreachable (residual stalled at {residual:.3e} after {iterations} iterations)")]
    UnreachableTarget { iterations: usize, residual: f64 },
    #[error("no configuration within joint limits satisfies the target (residual {residual:.3e})")]
    Infeasible { iterations: usize, residual: f64 },
    #[error("both solvers failed: jacobian: {jacobian}; sqp: {sqp}")]
    BothFailed {
        jacobian: Box<IkError>,
        sqp: Box<IkError>,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl IkError {
    /// Stable name used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            IkError::NoConvergence { .. } => "NoConvergence",
            IkError::UnreachableTarget { .. } => "UnreachableTarget",
            IkError::Infeasible { .. } => "Infeasible",
            IkError::BothFailed { jacobian, sqp } => {
                if jacobian.kind() == "UnreachableTarget" || sqp.kind() == "UnreachableTarget" {
                    "UnreachableTarget"
                } else if sqp.kind() == "Infeasible" {
                    "Infeasible"
                } else {
                    "NoConvergence"
                }
            }
            IkError::InvalidRequest(_) => "InvalidRequest",
        }
    }

    /// Iterations the failed attempt used; both solvers' for a race.
    pub fn iterations(&self) -> usize {
        match self {
            IkError::NoConvergence { iterations, .. }
            | IkError::UnreachableTarget { iterations, .. }
            | IkError::Infeasible { iterations, .. } => *iterations,
            IkError::BothFailed { jacobian, sqp } => jacobian.iterations() + sqp.iterations(),
            IkError::InvalidRequest(_) => 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no collision-free solution within the swarm budget (penalty {penalty:.4e})")]
    NoSafeSolution { penalty: f64 },
    #[error("no seed yields a valid IK solution: {0}")]
    IkFailure(IkError),
    #[error("invalid plan request: {0}")]
    InvalidRequest(String),
}

impl PlanError {
    /// Stable name used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            PlanError::NoSafeSolution { .. } => "NoSafeSolution",
            PlanError::IkFailure(e) => e.kind(),
            PlanError::InvalidRequest(_) => "InvalidRequest",
        }
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scene: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid chain for manipulator {index}: {source}")]
    Chain {
        index: usize,
        #[source]
        source: ChainError,
    },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("initial collision between {a} and {b} (center distance {distance:.4} m, radii sum {radii:.4} m)")]
    InitialCollision {
        a: String,
        b: String,
        distance: f64,
        radii: f64,
    },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("failed to read log: {0}")]
    Io(#[from] std::io::Error),
    #[error("log header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("log line {line}: {message}")]
    Body { line: usize, message: String },
}

impl SceneError {
    /// Stable name used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            SceneError::Io { .. } => "Io",
            SceneError::Parse(_) => "Parse",
            SceneError::Chain { .. } => "InvalidChain",
            SceneError::Invalid(_) => "InvalidScene",
            SceneError::InitialCollision { .. } => "InitialCollision",
        }
    }
}

impl LogError {
    /// Stable name used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            LogError::Io(_) => "Io",
            LogError::Header(_) | LogError::Body { .. } => "Parse",
        }
    }
}
