use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty CFE has no value")]
    EmptyCfe,

    #[error("invalid continued fraction: {0}")]
    InvalidCfe(String),

    #[error("invalid map spec: {0}")]
    InvalidMap(String),

    #[error("orbit escaped at n={index} (|z| = {modulus:e}); precision too low or invalid spec")]
    OrbitEscaped { index: u64, modulus: f64 },

    #[error("precision exhausted at m={m}: closest returns are not monotone")]
    PrecisionExhausted { m: usize },

    #[error("precision escalation did not converge up to {max_bits} bits")]
    PrecisionNotConverged { max_bits: u32 },

    #[error("orbit too short for level M={level}: max bracket gap {gap:e} exceeds {bound:e}")]
    OrbitTooShort { level: u32, gap: f64, bound: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("singular regression: {0}")]
    SingularFit(String),

    #[error("no scaling window; increase M or N")]
    NoScalingWindow,

    #[error("zero variance in sample")]
    ZeroVariance,

    #[error("range exceeds spectrum: {0}")]
    OutOfRange(String),

    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for bad input or environment, 4 when no scaling
    /// window exists, 3 for every other numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyCfe
            | Error::InvalidCfe(_)
            | Error::InvalidMap(_)
            | Error::Config(_)
            | Error::CacheMismatch(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::NoScalingWindow => 4,
            _ => 3,
        }
    }
}
