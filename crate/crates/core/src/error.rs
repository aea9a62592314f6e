use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix of {rows}x{cols} exceeds the {max}-entry cap")]
    DimensionOverflow { rows: usize, cols: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("factor index {index} out of range for a {factors}-factor layout")]
    FactorOutOfRange { index: usize, factors: usize },

    #[error("matrix is not Hermitian (relative deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("singular matrix")]
    Singular,

    #[error("overflow in {0}")]
    Overflow(&'static str),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("truncation N={truncation} too small for amplitude {amplitude}: Fock tail {tail:.3e}")]
    TruncationTooSmall { amplitude: f64, truncation: usize, tail: f64 },

    #[error("quadrature outcome {xi} outside the window ±{window}")]
    OutsideWindow { xi: f64, window: f64 },

    #[error("projection onto the {0} sector has zero probability")]
    ZeroProbability(&'static str),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integrator failure at t={time:.4}: {reason}")]
    IntegratorFailure { time: f64, reason: String },

    #[error("quasi-steady state not reached within t={t_max} (residual {residual:.3e})")]
    NotConverged { t_max: f64, residual: f64 },

    #[error("Bell phase undefined: coherence {coherence:.3e}")]
    UndefinedPhase { coherence: f64 },

    #[error("grid too small: {0} points per axis")]
    GridTooSmall(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
