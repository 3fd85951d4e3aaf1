use thiserror::Error;

/// Errors raised by the simulator and its estimation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observation window too short: L = T*f_s = {0} < 1")]
    ObservationWindow(f64),

    #[error("edge budget {budget} below connectivity floor {floor} for {n} nodes")]
    EdgeBudget {
        n: usize,
        budget: usize,
        floor: usize,
    },

    #[error("no strongly connected graph found after {0} attempts")]
    GenerationAttempts(usize),

    #[error("network is not strongly connected")]
    NotStronglyConnected,

    #[error("network is not symmetric: edge ({0}, {1}) has no reverse")]
    NotSymmetric(usize, usize),

    #[error("weight matrix kind mismatch: expected {expected}")]
    WeightKind { expected: &'static str },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("push-sum weight of node {node} is non-positive ({value})")]
    WeightUnderflow { node: usize, value: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("node count mismatch: expected {expected}, got {got}")]
    NodeCount { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("topology parse error at line {line}: {msg}")]
    Topology { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
