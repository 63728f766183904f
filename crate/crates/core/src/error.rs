//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Structurally broken model: bad dimensions, out-of-range recursion
    /// targets, duplicate labels.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Unknown builtin model name.
    #[error("unknown builtin model `{0}`")]
    UnknownBuiltin(String),

    /// Model file does not match the canonical schema.
    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// An iterative procedure ran out of budget.
    #[error("{what}: no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Perron eigenvector requested for a kernel with spectral radius zero.
    #[error("spectral radius is zero: no Perron eigenvector")]
    NoPerronVector,

    /// Operation only defined for a primitive off-diagonal kernel.
    #[error("operation requires a primitive off-diagonal kernel")]
    NotPrimitive,

    /// Operation only defined in the supercritical regime.
    #[error("operation requires 2*rho > 1 (got 2*rho = {two_rho})")]
    NotSupercritical { two_rho: f64 },

    /// Internal consistency failure of the bivariate iteration.
    #[error("pair-measure marginals drifted by {drift:.3e} at step {step}")]
    MarginalDrift { step: usize, drift: f64 },

    /// Exhaustive enumeration would exceed the hard cap.
    #[error("enumeration of {required} assignments exceeds the cap of {cap}")]
    ResourceCap { required: u128, cap: u128 },

    /// Requested computation is outside the supported range.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Simulation refused or misconfigured.
    #[error("simulation: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
