use alloc::string::String;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised anywhere in the forecasting core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// A configuration value violates its invariant. `key` is a dotted path.
    #[error("invalid configuration at `{key}`: {reason}")]
    Config { key: String, reason: String },
    /// Input data failed validation.
    #[error("invalid data: {0}")]
    Data(String),
    #[error("text embedding: {0}")]
    Text(String),
    /// Pooling strategy cannot be applied to this embedding set.
    #[error("pooling strategy `{strategy}` unavailable for channel `{channel}`: no {strategy} token index")]
    StrategyUnavailable { strategy: &'static str, channel: String },
    #[error("metric undefined: {0}")]
    Metric(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by invalid user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Diverged { .. })
    }
}
