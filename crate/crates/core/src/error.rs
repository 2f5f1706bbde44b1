use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid cutoff: {cutoff} Hz must lie strictly between 0 and the Nyquist frequency {nyquist} Hz")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid decimation ratio: {fs} Hz is not an integer multiple of {target} Hz")]
    InvalidRatio { fs: f64, target: f64 },

    #[error("invalid split: cannot cut {len} samples into {parts} epochs")]
    InvalidSplit { len: usize, parts: usize },

    #[error("no spectral peak: signal is identically zero after mean removal")]
    NoPeak,

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("invalid mass: {0}")]
    InvalidMass(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("rank-deficient regressor matrix")]
    RankDeficient,

    #[error("VAR model is unstable (largest companion eigenvalue modulus {max_modulus:.6})")]
    Unstable { max_modulus: f64 },

    #[error("transfer matrix is not invertible at {freq} Hz")]
    NonInvertible { freq: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("Wilson factorization did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("logarithm argument {argument} out of domain at {freq} Hz")]
    NumericDomain { freq: f64, argument: f64 },

    #[error("invalid band [{lo}, {hi}] Hz: {reason}")]
    InvalidBand { lo: f64, hi: f64, reason: String },

    #[error("no qualifying first peak for participant {0}")]
    MissingPeak(String),

    #[error("surrogate pool too small: {0}")]
    InsufficientPool(String),

    #[error("frequency grid mismatch: {0}")]
    Grid(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("parse error at line {line}, column '{column}': {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
