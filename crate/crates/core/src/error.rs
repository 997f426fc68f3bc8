//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("integer overflow in {0}")]
    Overflow(String),

    #[error("degenerate sample geometry: {0}")]
    DegenerateSamples(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureDiverged(String),

    #[error("divergent tail integral: {0}")]
    DivergentTail(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("derivative order {requested} exceeds supported order {supported}")]
    DerivOrder { requested: usize, supported: usize },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("evaluation domain error: {0}")]
    EvalDomain(String),

    #[error("kernel must be nonnegative for viscosity checks: {0}")]
    KernelSign(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),
}

pub type Result<T> = std::result::Result<T, Error>;
