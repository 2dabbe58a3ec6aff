use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrmError>;

#[derive(Debug, Error)]
pub enum CrmError {
    #[error("not a trace file")]
    NotATrace,

    #[error("unsupported version: {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt trace: {0}")]
    CorruptTrace(String),

    #[error("header/payload disagreement: {0}")]
    HeaderPayloadDisagreement(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("degenerate direction: class means coincide")]
    DegenerateDirection,

    #[error("requested component {requested} exceeds rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("both classes must be present")]
    SingleClass,

    #[error("missing section `{section}` required for level {level}")]
    MissingSection {
        section: &'static str,
        level: &'static str,
    },

    #[error("logistic regression did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("incomparable runs: {0}")]
    IncomparableRuns(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for CrmError {
    fn from(e: serde_json::Error) -> Self {
        CrmError::Serialization(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> CrmError {
    CrmError::InvalidArgument(msg.into())
}
