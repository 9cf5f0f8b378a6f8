use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument {0} lies on the branch cut")]
    BranchCut(Complex64),
    #[error("jet orders differ: {0} vs {1}")]
    OrderMismatch(u32, u32),
    #[error("jet is not invertible: {0}")]
    NonInvertibleJet(&'static str),
    #[error("epsilon must be nonzero")]
    ZeroEpsilon,
    #[error("Newton iteration diverged from seed {seed:?}, last iterate {last:?}")]
    NewtonDivergence {
        seed: [Complex64; 2],
        last: [Complex64; 2],
    },
    #[error("extrapolation unstable: {0}")]
    ExtrapolationUnstable(String),
    #[error("resonance obstruction at degree {degree}")]
    ResonanceObstruction { degree: u32 },
    #[error("direction is not characteristic: {0}")]
    NotCharacteristic(String),
    #[error("degenerate fixed-point splitting: {0}")]
    DegenerateSplitting(String),
    #[error("orbit did not enter the incoming petal after {steps} steps (escaped: {escaped})")]
    NotInBasin { steps: usize, escaped: bool },
    #[error("Fatou tail did not converge (last increment {last_increment:e})")]
    TailNotConverged { last_increment: f64 },
    #[error("local inverse left its contraction region at {0:?}")]
    InverseBranchLost([Complex64; 2]),
    #[error("orbit left the domain at step {0}")]
    DomainEscape(usize),
    #[error("tangential coordinate vanishes")]
    ZeroTangentialCoordinate,
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
