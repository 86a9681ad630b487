use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a documented precondition (lengths, sums, sizes).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Every mixture component assigns zero probability to the client.
    #[error("degenerate client: every component assigns zero probability to n = {n}")]
    DegenerateClient { n: u32 },

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures of the numerical procedure itself, as opposed to
    /// bad input data or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::DegenerateClient { .. } | Error::Init(_)
        )
    }
}
