//! Simulation lab for stochastic gradient descent viewed as a discretized
//! stochastic differential equation.
//!
//! The crate runs discrete SGD, its Euler–Maruyama SDE counterpart and the
//! exact Ornstein–Uhlenbeck propagator on analytic landscapes and small
//! MLPs, and measures the quantities the learning-rate / batch-size ratio
//! controls: stationary spread, expected loss, Hessian-based minimum width
//! and long-run basin occupancy.

#[cfg(feature = "cli")]
pub mod cli;
pub mod curvature;
pub mod dynamics;
pub mod equilibrium;
pub mod experiments;
pub mod error;
pub mod landscape;
pub mod noise;

pub use error::{LabError, Result};
