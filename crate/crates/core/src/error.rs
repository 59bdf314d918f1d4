use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient matrix: smallest singular value {sigma_min:e} ({ratio:e} of the largest)")]
    RankDeficient { sigma_min: f64, ratio: f64 },

    /// The new input lies in the span of the previous ones and the target
    /// agrees with the current model, so the task carries no information.
    #[error("task is linearly dependent on earlier tasks (residual {residual:e})")]
    DependentTask { residual: f64 },

    /// The new input lies in the span of the previous ones but the target
    /// contradicts them.
    #[error("infeasible constraints: dependent task with residual {residual:e}")]
    Infeasible { residual: f64 },

    #[error("degenerate task pair: c = {0} (inputs are colinear)")]
    DegenerateTask(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numeric range: {0}")]
    NumericRange(String),

    #[error("gaussian conditioning failed: {0}")]
    Conditioning(String),

    #[error("smoothing failed: {0}")]
    Smoothing(String),

    #[error("task {index}: {source}")]
    AtTask {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_task(self, index: usize) -> Self {
        Error::AtTask {
            index,
            source: Box::new(self),
        }
    }

    /// Strips any task-index annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTask { source, .. } => source.root(),
            e => e,
        }
    }
}
