use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Transform order is not a power of two or is below two.
    #[error("invalid transform order {0}: must be a power of two >= 2")]
    InvalidOrder(usize),

    /// A vector or matrix does not have the expected dimension.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A numeric argument is outside its valid domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Power normalization saw an all-zero batch.
    #[error("degenerate power: batch mean-square amplitude is zero")]
    DegeneratePower,

    /// Non-finite values reached a computation that requires finite input.
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    /// Training produced a non-finite loss or gradient.
    #[error("training aborted: {0}")]
    TrainAborted(String),

    /// A BLER curve does not bracket the target when extracting a threshold.
    #[error(
        "threshold target {target} not bracketed: nearest points \
         ({lo_snr_db} dB, {lo_bler}) and ({hi_snr_db} dB, {hi_bler})"
    )]
    Unbracketed {
        target: f64,
        lo_snr_db: f64,
        lo_bler: f64,
        hi_snr_db: f64,
        hi_bler: f64,
    },

    /// No decoding-energy entry is configured for the requested list size.
    #[error("no polar per-block energy configured for list size {0}")]
    MissingEnergyEntry(usize),

    /// A polar code configuration is inconsistent.
    #[error("invalid polar configuration: {0}")]
    InvalidPolarConfig(String),

    /// A checkpoint or CSV file could not be parsed.
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
