use alloc::string::String;

/// Errors produced by the simulator core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Inconsistent shapes, out-of-range hyperparameters, or incompatible
    /// strategy settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// A forward pass produced a non-finite value. `layer` is the index of
    /// the offending layer; `layer == n_layers` denotes the loss itself.
    #[error("non-finite value at layer {layer}")]
    NonFiniteLayer { layer: usize },
    /// Local optimization diverged.
    #[error("non-finite parameters after local epoch {epoch}")]
    NonFiniteEpoch { epoch: usize },
    /// A simulation round failed; wraps the underlying error.
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    /// A linear system was numerically singular.
    #[error("singular system (condition estimate {condition:e})")]
    Singular { condition: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                source: alloc::boxed::Box::new(e),
            },
        }
    }

    /// True for errors caused by numeric failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFiniteLayer { .. } | Error::NonFiniteEpoch { .. } | Error::Singular { .. } => {
                true
            }
            Error::Round { source, .. } => source.is_numeric(),
            Error::Config(_) => false,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Config(alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
