//! Cyclic function-block kernel with functional Design-by-Contract checks and
//! stochastic execution-time contracts.
//!
//! Execution-time bounds are not given up front. Each block is timed for a
//! training period, an empirical distribution of its execution times yields a
//! bound `tau = mu + gamma * s`, and `mu` and `s` then follow a sliding window
//! while `gamma` stays fixed.

pub mod apps;
pub mod contracts;
pub mod fault;
pub mod kernel;
pub mod rtmon;
pub mod stochastic;

pub use contracts::{ContractKind, ContractViolation};
pub use fault::FaultPlan;
pub use kernel::{AppConfig, Executor, RunReport};
pub use stochastic::{ExecTimeModel, ModelSnapshot};
