//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("aliasing risk: {nodes} collocation nodes cannot resolve {modes} modes (need at least 2N+1 = {})", 2 * modes + 1)]
    AliasingRisk { modes: usize, nodes: usize },

    #[error("domain length must be positive, got {0}")]
    InvalidDomain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fields do not share a basis")]
    BasisMismatch,

    #[error("non-finite value at node {node} (xi = {xi})")]
    NonFiniteAtNode { node: usize, xi: f64 },

    #[error("field contains non-finite entries (blow-up)")]
    NonFiniteField,

    #[error("reversed time interval: s = {s} > t = {t}")]
    ReversedInterval { s: f64, t: f64 },

    #[error("negative time step {0}")]
    NegativeStep(f64),

    #[error("invalid noise spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid jump specification: {0}")]
    InvalidJumpSpec(String),

    #[error("unknown model \"{0}\"")]
    UnknownModel(String),

    #[error("unknown override key \"{0}\"")]
    UnknownOverride(String),

    #[error("model rejected by validator: {0}")]
    InvalidModel(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("state blew up; last valid time {last_valid_time}")]
    BlowUp { last_valid_time: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "averaged-drift estimate unreliable: {dropped} of {total} paths hit the stopping radius"
    )]
    UnreliableEstimate { dropped: usize, total: usize },

    #[error("window snapshots do not cover the schedule: expected {expected}, got {got}")]
    WindowMismatch { expected: usize, got: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
