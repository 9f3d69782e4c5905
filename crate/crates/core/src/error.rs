use thiserror::Error;

/// Errors raised by model construction, spectral analysis and the gap machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("matrix is not Hermitian: max |A - A^dag| = {deviation:e} exceeds {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("eigensolver did not converge on a {dim}x{dim} matrix (max |entry| = {max_entry:e})")]
    NonConvergence { dim: usize, max_entry: f64 },

    #[error("closed-form XY+Z spectrum requires h != 0; use dense eigendecomposition instead")]
    UnsupportedNormalization,

    #[error("closed-form XY+Z spectrum is only valid for odd ring length, got n = {0}; use dense eigendecomposition instead")]
    UnsupportedParity(usize),

    #[error("rate table has no entry within {tolerance:e} of frequency {omega}")]
    UnknownFrequency { omega: f64, tolerance: f64 },

    #[error("{0} is not a Bohr frequency of the Hamiltonian")]
    NotBohrFrequency(f64),

    #[error("detailed balance violated at omega = {omega}: |G(w) - G(-w) e^(-beta w)| = {deviation:e}")]
    DetailedBalance { omega: f64, deviation: f64 },

    #[error("generator matrix is not Hermitian (deviation {deviation:e}); the rate function breaks KMS reversibility")]
    ReversibilityViolation { deviation: f64 },

    #[error("operator is not in V_omega for omega = {omega}: distance {distance:e}")]
    NotInSubspace { omega: f64, distance: f64 },

    #[error("basis is not an orthonormal eigenbasis of H (residual {residual:e})")]
    NotEigenbasis { residual: f64 },

    #[error("exhaustive bottleneck search is limited to 20 states, chain has {0}")]
    ChainTooLarge(usize),

    #[error("Cheeger witness is degenerate: Var(P) = {0:e}")]
    WitnessDegenerate(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
