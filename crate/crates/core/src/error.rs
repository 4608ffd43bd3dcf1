use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the policy, cost model, simulator and experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("batch size {batch} outside 1..={batch_max}")]
    BatchOutOfRange { batch: usize, batch_max: usize },

    #[error("speculative length {gamma} outside 0..={gamma_max}")]
    GammaOutOfRange { gamma: usize, gamma_max: usize },

    #[error("arm (B={batch}, gamma={gamma}) has no observations")]
    UnvisitedArm { batch: usize, gamma: usize },

    #[error("reward must be finite and non-negative, got {0}")]
    InvalidReward(f64),

    #[error("policy `{0}` requires a cost model")]
    MissingCostModel(&'static str),

    #[error("switch prefill supplied for a gamma = 0 step")]
    SwitchIntoAutoregressive,

    #[error("prefill cost table: {0}")]
    PrefillTable(String),

    #[error("workload: {0}")]
    Workload(String),

    #[error("{path}:{line}: {message}")]
    TraceRow { path: PathBuf, line: u64, message: String },

    #[error("overload: waiting queue reached {queued} requests at t={sim_time:.3}s (cap {cap})")]
    Overload { queued: usize, cap: usize, sim_time: f64 },

    #[error("compared runs do not share one arrival stream")]
    MismatchedWorkloads,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
