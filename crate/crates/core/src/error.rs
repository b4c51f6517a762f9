use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("operation `{op}` only supports dimension 2, got {dim}")]
    UnsupportedDimension { op: &'static str, dim: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("step too large: {quantity} = {value:.3e} exceeds {limit:.3e}")]
    StepTooLarge {
        quantity: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("impossible jump on channel {channel}: transformed state has norm {norm:.3e}")]
    ImpossibleJump { channel: usize, norm: f64 },

    #[error("negative detection rate {rate:.3e} on channel {channel}")]
    NegativeRate { channel: usize, rate: f64 },

    #[error("efficiency out of range: {0}")]
    EfficiencyOutOfRange(String),

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("unknown estimator: {0}")]
    UnknownEstimator(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
