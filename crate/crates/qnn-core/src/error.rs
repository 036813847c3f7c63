//! Shared error type for the crate.

use thiserror::Error;

use crate::spline::PiecewisePolyReport;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of its legal range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input value is outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural invariant of the input data does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A cached intermediate no longer matches the object it was produced
    /// from (for example a layer resized between forward and backward).
    #[error("stale state: {0}")]
    State(String),

    /// A serialized artifact could not be parsed or has the wrong version.
    #[error("format error: {0}")]
    Format(String),

    /// Training left the stable regime.
    #[error("training diverged at step {step} (loss {loss:e})")]
    Diverged { step: usize, loss: f64 },

    /// Piecewise extraction hit the region cap; the partial report covers the
    /// regions finished so far.
    #[error("region cap of {cap} exceeded during extraction")]
    RegionCap {
        cap: usize,
        partial: Box<PiecewisePolyReport>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
