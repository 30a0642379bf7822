//! The partner model: an SIS epidemic on the complete graph in which
//! individuals form and dissolve monogamous partnerships and infection
//! passes only between partners.
//!
//! * [`analytic`]: reproduction number, critical transmission rate,
//!   equilibrium fraction of infectious singles.
//! * [`mfe`]: the mean-field ODE system and its linearisation.
//! * [`sim`]: exact simulation of the finite-population chain, aggregate and
//!   site-level.
//! * [`branching`]: upper and lower branching bounds for the early epidemic.

pub mod analytic;
pub mod branching;
pub mod error;
pub mod linalg;
pub mod mfe;
pub mod replicas;
pub mod sim;
pub mod stats;

pub use analytic::{CriticalValue, Params};
pub use error::{ModelError, Result};
