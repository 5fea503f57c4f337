//! Meshfree dynamic programming for discrete-time optimal control.
//!
//! The optimal value function `V` of a control problem is represented through
//! its Kružkov transform `v = exp(-V)` and computed by value iteration with
//! the Bellman operator composed with a Shepard approximation over radial
//! basis functions. From the approximate value function a feedback law is
//! built, and the Bellman residual certifies where the closed loop descends.

pub mod approximation;
pub mod config;
pub mod error;
pub mod experiment;
pub mod feedback;
pub mod geometry;
pub mod kernels;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
