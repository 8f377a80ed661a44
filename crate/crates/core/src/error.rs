use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains NaN or non-finite values: {0}")]
    NonFinite(&'static str),

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("set is unbounded")]
    UnboundedSet,

    #[error("invalid gap parameters: {0}")]
    InvalidGapParams(String),

    #[error("dimension mismatch in `{map}`: expected {expected}, got {got}")]
    DimensionMismatch {
        map: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("stale gap evaluation for stage {stage}: (λ, η) changed since projection")]
    StaleGapEvaluation { stage: usize },

    #[error("projection QP failed ({context}): {reason}")]
    Projection { context: String, reason: String },

    #[error("cost `{0}` does not provide a constant Hessian")]
    NonQuadraticCost(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn reject_nan(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| !v.is_nan()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
