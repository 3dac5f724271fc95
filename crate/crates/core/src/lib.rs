//! Shallow recurrent networks with an arbitrary set of Jordan (output-to-hidden)
//! feedback lags, three exact gradient engines, and an hourly load forecasting
//! pipeline built on top of them.
//!
//! Module map:
//!
//! - [`numerics`]: dense kernels, operation counters, seeded RNG, least squares.
//! - [`model`]: architecture, parameter layout, forward pass, checkpoints.
//! - [`gradients`]: RTRL, BPTT and TRRL engines plus a finite-difference oracle.
//! - [`pbonacci`]: exact p-bonacci tables and their exponential bounds.
//! - [`training`]: loss heads, Adam, mini-batch training, grid search.
//! - [`pipeline`]: ingestion, encoding, deseasonalization, forecasting, walk-forward.
//! - [`metrics`]: RMSE, MAPE, pinball loss, interval backtesting.
//! - [`bench`]: counter-based complexity sweeps.
//! - [`config`]: the structured configuration file used by the `rnnp` binary.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod bench;
pub mod config;
pub mod error;
pub mod gradients;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod pbonacci;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
