use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin quantum number {0}: 2I must be a positive integer")]
    InvalidSpin(f64),

    #[error("magnetic field must be non-negative, got {0} T")]
    NegativeField(f64),

    #[error("axis must have unit norm (|n| = {0})")]
    NonUnitAxis(f64),

    #[error("EFG tensor is not traceless: trace {trace:e} exceeds tolerance {tolerance:e}")]
    NotTraceless { trace: f64, tolerance: f64 },

    #[error("EFG tensor is not symmetric")]
    NotSymmetric,

    #[error("strain component {0:e} outside the small-strain regime")]
    StrainTooLarge(f64),

    #[error("elastic constants violate stability (C11 > |C12|, C44 > 0)")]
    UnstableStiffness,

    #[error("strain geometry produces no electric field gradient")]
    SingularGeometry,

    #[error("transition {0} does not exist for this spin")]
    UnknownTransition(String),

    #[error("carrier {carrier} Hz is ambiguous between transitions {first} and {second}")]
    AmbiguousCarrier {
        carrier: f64,
        first: String,
        second: String,
    },

    #[error("carrier {carrier} Hz is off resonance for {transition} by {detuning} Hz")]
    OffResonance {
        carrier: f64,
        transition: String,
        detuning: f64,
    },

    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("quadrature did not converge: estimated error {error:e}, worst interval [{lo:e}, {hi:e}]")]
    QuadratureDiverged { error: f64, lo: f64, hi: f64 },

    #[error("insufficient decay range: {0}")]
    InsufficientDecay(String),

    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),

    #[error("singular normal equations")]
    SingularNormalEquations,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
