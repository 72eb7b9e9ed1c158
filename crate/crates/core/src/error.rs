use thiserror::Error;

/// Errors raised by model construction, parameter derivation, sampling and
/// estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid configuration values or inconsistent dimensions.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A time index outside the admissible range.
    #[error("index {index} outside admissible range [{lo}, {hi}]")]
    Index { index: usize, lo: usize, hi: usize },

    /// A factorization or solve failed. `step` carries the time index when
    /// the failure is tied to one.
    #[error("numeric failure{}: {what}", fmt_step(*.step))]
    Numeric { step: Option<usize>, what: String },

    /// The requested dense computation exceeds the size cap.
    #[error("problem too large: {0}")]
    Resource(String),
}

fn fmt_step(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn numeric(what: impl Into<String>) -> Self {
        Error::Numeric {
            step: None,
            what: what.into(),
        }
    }

    /// Attach a time index to a numeric error that does not carry one yet.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            Error::Numeric { step: None, what } => Error::Numeric {
                step: Some(k),
                what,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
