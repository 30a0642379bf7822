use thiserror::Error;

/// Errors raised by the model layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{quantity} = {value} is outside the domain [{lo}, {hi}]")]
    Domain {
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("state is outside the invariant region by {violation:e}")]
    OutsideRegion { violation: f64 },

    #[error("integration left the invariant region at t = {time} (drift {drift:e})")]
    IntegrationFailure { time: f64, drift: f64 },

    #[error("no convergence to equilibrium by t = {t_end}")]
    NoConvergence { t_end: f64 },

    #[error("equilibrium routes disagree: integrated {integrated:?} vs reconstructed {reconstructed:?}")]
    EquilibriumMismatch {
        integrated: [f64; 4],
        reconstructed: [f64; 4],
    },

    #[error("singular matrix in {context}")]
    Singular { context: &'static str },

    #[error("root is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
