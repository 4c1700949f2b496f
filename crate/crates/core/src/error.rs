use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sector dimension {dim} exceeds the configured cap {cap}")]
    CapExceeded { dim: usize, cap: usize },

    #[error("dense path refused: dimension {dim} exceeds dense cap {cap}, use the Krylov path")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("sector mismatch: {0}")]
    SectorMismatch(String),

    #[error("term filter `{0}` requires a plaquette tiling")]
    MissingTiling(String),

    #[error("Krylov propagation did not converge (achieved residual {residual:.3e})")]
    KrylovNonConvergence { residual: f64 },

    #[error("norm underflow during imaginary-time evolution")]
    NormUnderflow,

    #[error("step rejected: norm drift {drift:.3e} exceeds 1e-8")]
    NormDrift { drift: f64 },

    #[error("non-positive amplitude {0} passed to the phase-gradient rule")]
    NonPositiveAmplitude(f64),

    #[error("no pulse available for pair kind {0}")]
    MissingPulse(String),

    #[error("pulse fidelity {best:.6} below floor {floor:.6} after all restarts")]
    FidelityFloor { best: f64, floor: f64, result: Box<crate::pulse::PulseResult> },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no peak above the prominence floor")]
    NoPeak,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
