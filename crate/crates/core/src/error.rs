use thiserror::Error;

/// Errors across the toolkit. Variants carry enough context to point at the
/// offending band, antenna, or scenario field.
#[derive(Debug, Error)]
pub enum Error {
    #[error("subcarrier index {k} is not valid for band {band}")]
    InvalidSubcarrier { band: usize, k: i32 },

    #[error("band {band}: need at least {needed} subcarriers on each side of k=0, got {got_neg}/{got_pos}")]
    InsufficientSubcarriers {
        band: usize,
        needed: usize,
        got_neg: usize,
        got_pos: usize,
    },

    #[error("kappa calibration constant must be nonzero")]
    ZeroKappa,

    #[error("band channels mix exponents ({0} vs {1})")]
    MixedExponents(u32, u32),

    #[error("expected exponent {expected}, got {got}")]
    WrongExponent { expected: u32, got: u32 },

    #[error("no band channels to combine")]
    EmptyCombine,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("solver input sizes differ: {h} channel values vs {freqs} frequencies")]
    DimensionMismatch { h: usize, freqs: usize },

    #[error("solver needs at least 2 frequencies, got {0}")]
    TooFewFrequencies(usize),

    #[error("invalid delay grid: {0}")]
    InvalidGrid(String),

    #[error("profile has no peak above the detection threshold")]
    NoPeak,

    #[error("only {got} geometrically consistent distances remain, need {needed}")]
    InsufficientDistances { got: usize, needed: usize },

    #[error("localization failed to converge from any initialization")]
    LocalizationFailed,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scenario {path}: {msg}")]
    Scenario { path: String, msg: String },

    #[error("malformed CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
