use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("window too small: boundary mass {mass:e} exceeds {threshold:e}")]
    WindowTooSmall { mass: f64, threshold: f64 },

    #[error("kernel under-resolved: {cells_per_sigma:.3} cells per standard deviation, need at least 4")]
    KernelUnderResolved { cells_per_sigma: f64 },

    #[error("boundary leakage at step {step}: boundary mass {mass:e} exceeds {threshold:e}")]
    BoundaryLeakage { step: usize, mass: f64, threshold: f64 },

    #[error("mass drift {drift:e} at step {step} exceeds {threshold:e}")]
    MassDrift { step: usize, drift: f64, threshold: f64 },

    #[error("explicit lattice step unstable: dt * exit rate = {courant:.4} > 1")]
    UnstableStep { courant: f64 },

    #[error("undefined divergence: {0}")]
    UndefinedDivergence(String),

    #[error("step size {h} is not contractive, need h < {limit}")]
    NonContractive { h: f64, limit: f64 },

    #[error("missing metadata: {0}")]
    MissingMetadata(String),

    #[error("non-normalizable potential: {0}")]
    NonNormalizable(String),

    #[error("incompatible orders: need s + 1 >= alpha, got s = {s}, alpha = {alpha}")]
    OrderIncompatible { s: f64, alpha: f64 },

    #[error("fixed point did not converge after {rounds} rounds")]
    NonConvergent { rounds: usize },

    #[error("chain diverged at step {step} (particle {particle})")]
    ChainDiverged { step: usize, particle: usize },

    #[error("refinement check failed: relative change {relative_change:e} exceeds {tolerance:e}")]
    RefinementFailure { relative_change: f64, tolerance: f64 },

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Csv(e.to_string())
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(LabError::ParameterOutOfRange(msg()))
    }
}
