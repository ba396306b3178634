use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid needs at least 2 points per axis (got {signal}x{idler})")]
    GridTooSmall { signal: usize, idler: usize },

    #[error("grid must be square and symmetric for exchange of signal and idler")]
    AsymmetricGrid,

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix contains a negative entry ({value}) at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("input is empty")]
    Empty,

    #[error("arrival time {time_s:e} s falls outside the {window_s:e} s spectrometer window")]
    OutsideWindow { time_s: f64, window_s: f64 },

    #[error("{mass:.3e} of the probability mass falls outside the spectrometer window (limit {limit:.1e})")]
    Aliasing { mass: f64, limit: f64 },

    #[error("fit did not converge after {iterations} iterations (chi2 = {chi2:.4e}, last step {last_step:.3e}): {reason}")]
    FitFailed {
        iterations: usize,
        chi2: f64,
        last_step: f64,
        reason: String,
    },

    #[error("curve has no {0} data")]
    MissingCurveRegion(&'static str),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
