use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("degenerate grouping: feature {feature} is constant ({value}), one group would be empty")]
    DegenerateGrouping { feature: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("partition infeasible: certain orders form a cycle through documents {cycle:?}")]
    PartitionInfeasible { cycle: Vec<usize> },

    #[error("short list: {available} candidates cannot fill {k} positions")]
    ShortList { available: usize, k: usize },

    #[error("infeasible template {template}: needs A={need_a} B={need_b}, have A={have_a} B={have_b}")]
    InfeasibleTemplate {
        template: String,
        need_a: usize,
        need_b: usize,
        have_a: usize,
        have_b: usize,
    },

    #[error("malformed partition: {0}")]
    MalformedPartition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
