//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, QprobError>;

/// Everything that can go wrong while building fields or running checks.
///
/// Numerical operations return `Err` instead of silently producing NaN: a
/// field that is not normalized, a packet that touches the box boundary, or a
/// time step outside the stability region are caller mistakes, not values.
#[derive(Debug, thiserror::Error)]
pub enum QprobError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid units: {0}")]
    InvalidUnits(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("field contains a non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("field is not normalized: |integral - 1| = {defect:.3e} exceeds {tol:.1e}")]
    NotNormalized { defect: f64, tol: f64 },

    #[error("boundary leak: {0}")]
    BoundaryLeak(String),

    #[error("every point falls below the node threshold; no phase can be unwrapped")]
    AllMasked,

    #[error("symmetrized field norm {norm:.3e} is below 1e-12; the combination vanishes")]
    DegenerateZero { norm: f64 },

    #[error("node encountered: {0}")]
    NodeEncountered(String),

    #[error("CFL violation: c*dt/dx = {ratio:.4} exceeds the stability limit 0.9")]
    CflViolation { ratio: f64 },

    #[error("mass mismatch: {0}")]
    MassMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    ConfigParse(String),
}
