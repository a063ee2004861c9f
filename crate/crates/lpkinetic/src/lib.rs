//! Anisotropic Littlewood-Paley machinery on periodic grids, kinetic
//! alpha-stable kernels, stable-noise SDE flows and a Picard solver for the
//! small/large jump splitting, plus the experiment harness that measures the
//! decay rates and identities these objects are expected to satisfy.

pub mod estimates;
pub mod harness;
pub mod kernels;
pub mod lp_core;
pub mod picard;
pub mod quad;
pub mod sde_flow;
pub mod stable_sim;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: String, reason: String },
    #[error("grid does not resolve the requested blocks on axis {axis}: need at least {needed} points")]
    Unresolved { axis: usize, needed: usize },
    #[error("displacement is not a whole number of grid cells on axis {axis}")]
    OffGrid { axis: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::Param { name: name.to_string(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
