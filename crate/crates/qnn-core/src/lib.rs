//! Networks built from quadratic neurons.
//!
//! A quadratic neuron replaces the usual inner product with a product of two
//! affine forms plus a weighted square:
//!
//! ```text
//! q(x) = sigma( (x'Wr + br) * (x'Wg + bg) + (x.x)'Wb + c )
//! ```
//!
//! This crate implements the pieces needed to study such networks end to end:
//!
//! * [`tensor`] - the dense vector/matrix containers and the seeded RNG that
//!   everything else is built on.
//! * [`neurons`] - the neuron itself, its parameter variants, and hand-derived
//!   forward/backward passes.
//! * [`network`] - layer composition, optional ReZero residual blocks, and
//!   JSON checkpoints.
//! * [`relinear`] - the ReLinear training rules (shrunken rates and weight
//!   shrinkage), learning-rate schedules, and the SGD loop.
//! * [`spline`] - piecewise-polynomial splines, the constructive translation
//!   of a spline into a quadratic network, and the reverse extraction of the
//!   piecewise polynomial a trained univariate network computes.
//! * [`analysis`] - expressivity bounds (algebraic-variety dimension counts)
//!   and the Jacobian-based amplification probe.
//!
//! Everything is deterministic: the same seed reproduces the same run
//! bit for bit.

pub mod analysis;
pub mod error;
pub mod network;
pub mod neurons;
pub mod relinear;
pub mod spline;
pub mod tensor;

mod poly;

pub use analysis::{BoundReport, Realization};
pub use error::{Error, Result};
pub use network::{Architecture, BuildInit, Checkpoint, Network, NetworkGrads, Segment};
pub use neurons::{Activation, Layer, LayerCache, LayerGrads, NeuronKind, QuadraticParams};
pub use relinear::{
    AdaptiveSchedule, ConvergenceTrace, Dataset, InitMode, Loss, MetricsLog, MetricsRow, Optimizer,
    Schedule, TrainConfig, Variant,
};
pub use spline::{PiecewisePolyReport, PolyRegion, PolynomialSpline};
pub use tensor::{DenseMatrix, DenseVector, Rng};
