use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("environment has no safe zones")]
    NoSafeZones,

    /// Every sample in a batch had infinite cost.
    #[error("all samples infeasible")]
    AllInfeasible,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("convex decomposition failed at knot {knot}: {reason}")]
    Decomposition { knot: usize, reason: String },

    #[error("nmpc failed: {0}")]
    Nmpc(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
