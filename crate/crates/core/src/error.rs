use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("oracle contract violated: {0}")]
    OracleContract(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("embedding failed at domain index {index}: {source}")]
    EmbedFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Transport failures can be retried by the caller; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

/// Like [`ensure`] for caller-supplied data.
pub(crate) fn ensure_input(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Format(msg()))
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvariantViolation(msg()))
    }
}
