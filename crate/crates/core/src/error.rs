//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by model construction, solvers and iteration drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must live in the same ambient dimension do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Weights are negative or do not sum to one within tolerance.
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    /// A scalar parameter is out of its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Time step too large for the grid spacing and maximal speed.
    #[error("CFL violation: dt = {dt} exceeds h / k_max = {limit} (h = {h}, k_max = {k_max})")]
    CflViolation { dt: f64, h: f64, k_max: f64, limit: f64 },

    /// No grid node lies within one spacing of the target set.
    #[error("empty target mask: no grid node is within h = {h} of the target set")]
    EmptyTargetMask { h: f64 },

    /// Two trajectories or fields discretized on incompatible grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A query time or point lies outside the discretized domain.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// Optimal-trajectory tracing got stuck before reaching the target.
    #[error("trace failed ({context}): {reason}")]
    TraceFailed { context: String, reason: String },

    /// An iterative solve hit its sweep/iteration cap.
    #[error("no convergence after {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Malformed scenario or artifact file.
    #[error("config error: {0}")]
    Config(String),

    /// An artifact file is corrupt or inconsistent with its producer.
    #[error("artifact error: {0}")]
    Artifact(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
