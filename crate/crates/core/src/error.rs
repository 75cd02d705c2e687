use thiserror::Error;

use crate::predictor::MlpModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported Hilbert-space dimension {0} (only 2 and 4)")]
    UnsupportedDimension(usize),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration failed at step {step} (t = {time} us): {reason}")]
    Integration { step: usize, time: f64, reason: String },

    #[error("record too short: {len} samples, need at least {needed}")]
    RecordTooShort { len: usize, needed: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("series has zero variance; correlation is undefined")]
    ZeroVariance,

    #[error("series lengths differ or are below 2 ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("too few usable points for an exponential fit ({0})")]
    TooFewPoints(usize),

    #[error("trace is not decaying (fitted slope {0:+e} per us)")]
    NonDecaying(f64),

    #[error("upper limit {t_upper} us lies beyond the trace end {t_end} us")]
    OutOfRange { t_upper: f64, t_end: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        last_finite: Box<MlpModel>,
    },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
