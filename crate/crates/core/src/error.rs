use thiserror::Error;

use crate::lattice::Site;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside the operation's domain.
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("disk of radius {radius} does not embed injectively in a torus of side {side}")]
    EmbeddingTooLarge { radius: f64, side: u32 },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("conditioned walk is not defined at {0}")]
    UndefinedAtOrigin(Site),

    #[error("walk exceeded its step budget of {budget} steps")]
    Truncated { budget: u64, partial_len: usize },

    #[error("measure has zero mass at {site} where points are pending")]
    DegenerateDensity { site: Site },

    #[error("fields have different supports")]
    SupportMismatch,

    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
