use pe_decomp::decomp::DecompError;
use pe_decomp::grid::GridError;
use pe_decomp::sim::SimError;
use pe_decomp::solver::SolveError;
use serde::Serialize;

/// Failure of a run. Each variant has its own exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Hypothesis(String),
    Decomposition(String),
    Budget(String),
    NotConverged(String),
    Io(String),
    Other(String),
}

#[derive(Serialize)]
struct Record<'a> {
    error: &'a str,
    exit_code: u8,
    message: &'a str,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Decomposition(_) => 4,
            CliError::Budget(_) => 5,
            CliError::NotConverged(_) => 6,
            CliError::Io(_) => 7,
            CliError::Other(_) => 8,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Hypothesis(_) => "hypothesis",
            CliError::Decomposition(_) => "decomposition",
            CliError::Budget(_) => "budget",
            CliError::NotConverged(_) => "not_converged",
            CliError::Io(_) => "io",
            CliError::Other(_) => "other",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Hypothesis(m)
            | CliError::Decomposition(m)
            | CliError::Budget(m)
            | CliError::NotConverged(m)
            | CliError::Io(m)
            | CliError::Other(m) => m,
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        serde_json::to_string(&Record {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.message(),
        })
        .expect("plain record serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        let msg = e.to_string();
        match e {
            SolveError::HypothesisFailed(_) => CliError::Hypothesis(msg),
            SolveError::BudgetExceeded { .. } => CliError::Budget(msg),
            SolveError::UnresolvedTarget { .. }
            | SolveError::EmptyTarget
            | SolveError::Dimension { .. }
            | SolveError::InvalidParams(_)
            | SolveError::Grid(GridError::Invalid(_)) => CliError::Config(msg),
            _ => CliError::Other(msg),
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        let msg = e.to_string();
        match e {
            DecompError::CrossCoupled { .. } | DecompError::NotShared => CliError::Decomposition(msg),
            DecompError::GridCount { .. } | DecompError::Envelope(_) => CliError::Config(msg),
            DecompError::NotConverged { .. } => CliError::NotConverged(msg),
            DecompError::Solve { index, source } => match CliError::from(source) {
                CliError::Other(m) => CliError::Other(format!("sub-problem {index}: {m}")),
                other => other.prefixed(&format!("sub-problem {index}: ")),
            },
            _ => CliError::Other(msg),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => CliError::Io(e.to_string()),
            SimError::Invalid(m) => CliError::Config(m),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io(e) => CliError::Io(e.to_string()),
            GridError::Invalid(m) => CliError::Config(m),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl CliError {
    fn prefixed(self, p: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{p}{m}")),
            CliError::Hypothesis(m) => CliError::Hypothesis(format!("{p}{m}")),
            CliError::Decomposition(m) => CliError::Decomposition(format!("{p}{m}")),
            CliError::Budget(m) => CliError::Budget(format!("{p}{m}")),
            CliError::NotConverged(m) => CliError::NotConverged(format!("{p}{m}")),
            CliError::Io(m) => CliError::Io(format!("{p}{m}")),
            CliError::Other(m) => CliError::Other(format!("{p}{m}")),
        }
    }
}
