//! Experiment harness for qnn-core.
//!
//! Five desk-scale experiments, each deterministic per seed and emitting CSV
//! artifacts plus checkpoints:
//!
//! * `runge` - fit the Runge function with a width-8, depth-5 quadratic net
//!   under the ReLinear training variants, then extract the piecewise
//!   polynomial the trained net computes.
//! * `stability` - random-init magnitude blowup of quadratic vs conventional
//!   nets as the init scale sigma varies.
//! * `xor` - the single-quadratic-neuron XOR solution, analytic and trained.
//! * `toy2d` - concentric-circles classification with matched quadratic and
//!   conventional nets.
//! * `bounds-table` - variety-dimension bounds and amplification estimates
//!   per architecture.

mod error;
pub mod experiments;

pub use error::{Error, Result};
pub use experiments::{
    circles_analytic, circles_dataset, default_bound_archs, load_train_config, parse_arch,
    run_bounds_table, run_runge, run_stability, run_toy2d, run_xor, runge, runge_config,
    runge_dataset, toy2d_config, xor_analytic, xor_analytic_correct, xor_config, xor_corners,
    xor_dataset, CapacityRow, Experiment, ExperimentSpec, RungeRun, StabilityRow, Toy2dRun,
    XorOutcome, XorRun,
};
