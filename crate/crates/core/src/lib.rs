//! Potential-map conditioned neural trajectories.
//!
//! The crate covers the whole desk-scale driving stack:
//!
//! - [`potential_map`]: bird's-eye goal/obstacle potential grids.
//! - [`scenario_data`]: synthetic expert episodes, causal relabeling and the
//!   episode file format.
//! - [`diffnet`]: a small differentiable-network substrate (dense, conv,
//!   leaky-ReLU, GRU, Adam) with finite-difference checking.
//! - [`neural_trajectory`]: sinusoidal-basis trajectories with closed-form
//!   velocity and acceleration.
//! - [`driving_model`]: encoder + trajectory head, high-order imitation loss
//!   and the training loop.
//! - [`controller`]: longitudinal feedback and rear-wheel feedback steering.
//! - [`simulator`]: asynchronous planner/tracker loop over a kinematic
//!   bicycle with injectable planning latency.
//! - [`metrics`]: open-loop displacement and velocity errors.

pub mod controller;
pub mod diffnet;
pub mod driving_model;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod neural_trajectory;
pub mod potential_map;
pub mod scenario_data;
pub mod simulator;

pub use error::{Error, Result};
