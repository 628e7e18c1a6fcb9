//! Complexity-aware neural network configuration search.
//!
//! The search minimizes `f = (1 − best validation accuracy) + w_c · c / c0`,
//! where `c` is a training-cost metric (seconds per epoch or parameter
//! count), through three greedy stages:
//!
//! 1. Bayesian optimization over depth and widths, everything else at presets.
//! 2. Ordered grid searches over downsampling, batch norm, dropout and
//!    shortcuts (a single dropout grid for MLPs), freezing each winner.
//! 3. Bayesian optimization over learning rate, weight decay and batch size.
//!
//! Configs are compared by a convex combination of squared-exponential
//! kernels over per-hyperparameter ramp distances ([`kernel`]). Evaluation is
//! pluggable ([`evaluators`]): closed-form synthetic surfaces, a built-in MLP
//! trainer, or an external process speaking a line-delimited JSON protocol.

pub mod bayesopt;
pub mod config;
pub mod evaluators;
pub mod kernel;
pub mod objective;
pub mod persist;
pub mod pipeline;
pub mod sobol;

pub use config::{Arch, CnnArch, Config, MlpArch, TrainingHp};
pub use objective::{EvalResult, ObjectiveSpec};
