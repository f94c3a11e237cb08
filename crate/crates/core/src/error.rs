use statforge_tensor::{ParameterStore, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate likelihood: transition density collapses to a point mass")]
    DegenerateLikelihood,

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(&'static str),

    #[error("statistic component {component} has zero spread")]
    DegenerateStatistic { component: usize },

    #[error("replica weights sum to zero")]
    DegenerateWeights,

    #[error("training diverged at step {step}: {source}")]
    TrainingDiverged {
        step: u64,
        #[source]
        source: TensorError,
        /// Most recent checkpointed weights.
        checkpoint: Box<ParameterStore>,
    },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("empty sample")]
    EmptySample,

    #[error("configuration: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
