//! Numerical laboratory for gradient-flow dynamics viewed through spectral
//! shells of the function-space operator `M = JJᵀ`.

pub mod condition_diagnostics;
pub mod error;
pub mod gradient_flow;
pub mod learning_config;
pub mod residual_renorm;
pub mod rng;
pub mod shell_dynamics;
pub mod spectral_core;

pub use error::{GrsdError, Result};
