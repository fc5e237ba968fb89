use thiserror::Error;

/// Errors produced by the rule language, the compiler, and the evaluators.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("hierarchy contains a cycle: {0}")]
    HierarchyCycle(String),

    #[error("rule set is not stratified: {0}")]
    NotStratified(String),

    #[error("stratum closure exceeded the cap of {cap} rules")]
    ClosureCap { cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("score at index {index} is {value}, outside [0, 1]")]
    InvalidScore { index: usize, value: f64 },

    #[error("label at index {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: f64 },

    #[error("circuit has no hierarchy mask; the rule set is not an HMC hierarchy")]
    NotHmc,

    #[error("incompatible model layout: {0}")]
    IncompatibleLayout(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("degenerate rectangle {index}: zero area")]
    DegenerateRectangle { index: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
