use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum LsvError {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data contained NaN or infinite values.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Linear solve failed even after diagonal jitter.
    #[error("numerical failure: {message} (dim={dim}, trace={trace:.3e}, jitter={jitter:.3e})")]
    Factorization {
        message: String,
        dim: usize,
        trace: f64,
        jitter: f64,
    },

    /// Implied volatility has no solution for the given price.
    #[error("no implied volatility: price {price} outside ({lower}, {upper})")]
    NoImpliedVol { price: f64, lower: f64, upper: f64 },

    /// Market surface failed a no-arbitrage or extraction check.
    #[error("surface construction: {0}")]
    Surface(String),

    /// The particle scheme diverged or a fit failed mid-run.
    #[error("simulation failed at step {step}: {message}")]
    Simulation { step: usize, message: String },

    /// Config file or override could not be interpreted.
    #[error("config: {0}")]
    Config(String),

    #[error("sweep: {0}")]
    Sweep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LsvError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        LsvError::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, LsvError>;
