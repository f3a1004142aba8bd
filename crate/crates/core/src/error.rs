use thiserror::Error;

use crate::fxp::FxpFormat;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),

    #[error("fixed-point format mismatch: {left} vs {right}")]
    FormatMismatch { left: FxpFormat, right: FxpFormat },

    #[error("non-finite value {value} ({context})")]
    NonFinite { value: f64, context: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("non-finite intermediate at time step {step} ({what})")]
    NonFiniteIntermediate { step: usize, what: &'static str },

    #[error("malformed lookup table: {0}")]
    MalformedTable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("PAPR target {target_db} dB unreachable, achieved {achieved_db:.3} dB")]
    PaprUnreachable { target_db: f64, achieved_db: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("PE group `{group}` has no PEs but {work} ops assigned")]
    EmptyPeGroup { group: &'static str, work: usize },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
