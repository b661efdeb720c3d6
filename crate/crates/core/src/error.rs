use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("function not resolved on the grid: {outside:.3e} of the mass lies in the outer margin")]
    Truncation { outside: f64 },

    #[error("not a nonnegative form (smallest eigenvalue {min_eig:.3e})")]
    NotNonnegative { min_eig: f64 },

    #[error("matrix is not Hermitian (relative deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last gap {gap:.3e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("weight too weak for LAP norm (s = {s}, need s > 1/2)")]
    WeightTooWeak { s: f64 },

    #[error("spectral parameter {lambda} outside the admissible set: {reason}")]
    InvalidLambda { lambda: f64, reason: String },

    #[error("singular operator at lambda = {lambda}")]
    Singular { lambda: f64 },

    #[error("function is not finite on the spectrum sample at {at}")]
    NotFiniteOnSpectrum { at: f64 },

    #[error("invalid spectral function: {0}")]
    InvalidSpectralFunction(String),

    #[error("Nyquist violation: max |a| = {max_a:.4e} exceeds pi/dt = {limit:.4e}")]
    Nyquist { max_a: f64, limit: f64 },

    #[error("t_max too small: tail {tail:.3e} exceeds 10% of {total:.3e}")]
    TMaxTooSmall { tail: f64, total: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("empty grid after excluding breakpoints")]
    EmptyGrid,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("vector is spectrally disjoint from the window (norm {norm:.3e})")]
    SpectrallyDisjoint { norm: f64 },

    #[error("formula/inversion inconsistency: {0}")]
    Inconsistent(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },

    #[error("unsupported operation for this model: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
