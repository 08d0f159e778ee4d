//! Joint movable-antenna trajectory and covariance design for integrated
//! sensing and communication.
//!
//! Modules, bottom-up: [`grid`] (lattice and feasibility predicates),
//! [`channel`] (steering vectors, user channels), [`beampattern`] (gain,
//! mismatch, SINR), [`subproblems`] (the convex programs), [`bnb`] (global
//! search), [`oracle`] (exhaustive reference) and [`harness`] (experiments).

pub mod beampattern;
pub mod bnb;
pub mod channel;
pub mod grid;
pub mod harness;
pub mod oracle;
pub mod subproblems;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("internal consistency: {0}")]
    Internal(String),
    #[error(transparent)]
    Conic(#[from] maisac_conic::ConicError),
}
