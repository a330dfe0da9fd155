//! Solver and simulator for parameterized sequential decision problems whose
//! parameters move in time.
//!
//! * [`model`] defines the decision process, its parameters and validation.
//! * [`soft_solver`] computes the entropy-regularized value tables, the Gibbs
//!   policy and annealed static optima.
//! * [`sensitivity`] differentiates the free energy with respect to every
//!   parameter coordinate.
//! * [`controller`] drives the manipulable parameters with a
//!   control-Lyapunov feedback law.
//! * [`scenario`] builds the multi-UAV relay network.
//! * [`harness`] runs simulations, the re-optimization baseline and the
//!   verification oracles.

pub mod controller;
pub mod harness;
pub mod model;
pub mod scenario;
pub mod sensitivity;
pub mod soft_solver;

mod numeric;

pub use model::{ModelSpec, ParamCoord, ParamLayout, ParameterVector};
