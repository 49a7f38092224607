use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("causality violation: event at t={time} scheduled when now={now}")]
    Causality { time: f64, now: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("run aborted after exceeding the event budget of {budget} events")]
    EventBudget { budget: u64 },

    #[error("cell {cell} aborted: {source}")]
    Cell { cell: String, source: Box<SimError> },

    #[error("malformed input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
