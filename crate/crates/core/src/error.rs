use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: bad dimensions, out-of-range parameters, unknown names.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A linear-algebra step failed (singular innovation, non-PSD factor).
    #[error("numerical failure at t = {t}: {message}")]
    Numerical { t: f64, message: String },

    /// A model function returned a non-finite value.
    #[error("evaluation failure: {0}")]
    Evaluation(String),

    /// Malformed input file.
    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Input data that parses but cannot be used.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numerical(t: f64, msg: impl Into<String>) -> Self {
        Error::Numerical {
            t,
            message: msg.into(),
        }
    }

    /// Attach a time stamp to numerical errors raised without one.
    pub(crate) fn at_time(self, t: f64) -> Self {
        match self {
            Error::Numerical { t: old, message } if old.is_nan() => Error::Numerical { t, message },
            Error::Evaluation(m) => Error::Evaluation(format!("{m} (t = {t})")),
            other => other,
        }
    }
}
