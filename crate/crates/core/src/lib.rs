//! Repeated allocation of a reusable resource to strategic agents under
//! multi-dimensional long-term cost constraints.
//!
//! The library implements an incentive-aware primal-dual mechanism
//! (epoch-lazy dual updates, randomized exploration rounds, cost-adjusted
//! second-price allocation with a safety veto), FTRL and optimistic
//! fixed-point dual subroutines, a per-round vanilla primal-dual baseline,
//! strategic Q-learning agents, offline benchmarks, and a seeded experiment
//! harness. The `alloc` binary exposes the harness on the command line.

pub mod agents;
pub mod benchmark;
pub mod config;
pub mod dist;
pub mod dual;
pub mod harness;
pub mod market;
pub mod mechanism;
pub mod rng;

pub use config::ExperimentPlan;
pub use harness::{run_experiment, run_trial};
