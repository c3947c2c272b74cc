use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Table or vector shapes do not agree with the MDP.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    /// An importance ratio was requested for a pair the behavior policy never selects.
    #[error(
        "behavior probability is zero at history index {index} (state {state}, action {action})"
    )]
    ZeroBehavior {
        index: usize,
        state: usize,
        action: usize,
    },

    #[error("strategy `{strategy}` is not supported here: {reason}")]
    Unsupported { strategy: String, reason: String },

    #[error(
        "expansion budget of {budget} branch visits exceeded at horizon {horizon} \
         ({expanded} visits so far)"
    )]
    Budget {
        budget: u64,
        horizon: usize,
        expanded: u64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at `{token}`: {message}")]
    Parse { token: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(token: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            token: token.into(),
            message: message.into(),
        }
    }
}
