//! Per-instance improvement-path planning.
//!
//! The engine fits a gradient-boosted regressor to a tabular dataset, fits a
//! Bayesian mixture-of-experts surrogate to the regressor's view of the
//! data, and then searches a lattice over chosen intervention variables for
//! the least-cost route (cost = accumulated negative surrogate log-density)
//! to the node with the best predicted response. Each route is scored
//! against random monotone baseline routes between the same endpoints.
//!
//! Modules follow the processing order: [`data`] → [`regressor`] →
//! [`surrogate`] → [`planner`], with [`pipeline`] wiring them together
//! behind configuration and on-disk artifacts.

pub mod data;
pub mod math;
pub mod pipeline;
pub mod planner;
pub mod regressor;
pub mod surrogate;
