use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("process has {got} values but the tree has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },

    #[error("time index {t} outside 0..={depth}")]
    TimeOutOfRange { t: usize, depth: usize },

    #[error("stopping rule invalid: {0}")]
    InvalidRule(String),

    #[error("tree admits {count} stopping rules, above the enumeration cap {cap}")]
    TooManyRules { count: u128, cap: u128 },

    #[error("invalid randomized plan: {0}")]
    InvalidPlan(String),

    #[error("invalid intensity path: {0}")]
    InvalidIntensity(String),

    #[error("invalid distribution path: {0}")]
    InvalidCdf(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite sample: {0}")]
    NonFinite(String),

    #[error("invalid stage payoffs: {0}")]
    InvalidStages(String),

    #[error("simulation aborted: {0}")]
    Simulation(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
