//! Error type shared across the library.

use thiserror::Error;

/// Unified error for operator algebra, problem generation, sampling, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("map is {rows}x{cols}; this operation requires a square map")]
    NotSquare { rows: usize, cols: usize },

    #[error("map does not support {operation}")]
    Unsupported { operation: &'static str },

    #[error("numerically singular matrix: {detail}")]
    Singular { detail: String },

    #[error(
        "iterative solver stalled after {iterations} iterations \
         (relative residual {residual:.3e}, tolerance {tolerance:.3e})"
    )]
    SolverStalled {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error(
        "observation operator is rank deficient \
         (smallest singular value {smallest:.3e}, largest {largest:.3e})"
    )]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("invalid argument for {context}: {reason}")]
    InvalidArgument { context: &'static str, reason: String },

    #[error("this operation requires a standard normal prior; the prior is {found}")]
    UnsupportedPrior { found: &'static str },

    #[error("proposal engine does not match the prior family: {reason}")]
    EngineMismatch { reason: String },

    #[error(
        "spectral error target {target:.3e} is unreachable; \
         maximum attainable with positive scalings is {attainable:.3e}"
    )]
    UnreachableTarget { target: f64, attainable: f64 },

    #[error("nearest-neighbour graph is disconnected; its Laplacian has a multidimensional null space")]
    DisconnectedGraph,

    #[error(
        "wavenumber {wavenumber} is near-resonant on the {side}x{side} grid \
         (smallest operator eigenvalue magnitude {gap:.3e}); shift the wavenumber"
    )]
    ResonantWavenumber { wavenumber: f64, side: usize, gap: f64 },

    #[error("{context} requires symmetric operators (relative asymmetry {asymmetry:.3e})")]
    Asymmetric { context: &'static str, asymmetry: f64 },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
