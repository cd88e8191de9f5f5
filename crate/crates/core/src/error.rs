use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the range an operation accepts.
    #[error("domain error in `{arg}`: {msg}")]
    Domain { arg: &'static str, msg: String },

    /// The requested step count leaves no valid smoothing coefficient.
    #[error("infeasible plan: T = {steps} < T_min = {min_steps} (raw b = {raw_b})")]
    Infeasible {
        raw_b: f64,
        steps: usize,
        min_steps: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("trainer failure: {0}")]
    Trainer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(arg: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            arg,
            msg: msg.into(),
        }
    }
}
