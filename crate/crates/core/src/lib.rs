//! Independent mechanism analysis (IMA) toolkit for nonlinear blind source
//! separation experiments.
//!
//! - [`diffmath`]: small dense linear algebra and a matrix-level reverse-mode
//!   differentiation engine.
//! - [`mixing`]: random invertible MLP mixings, exact densities and the 2D
//!   Darmois construction.
//! - [`contrast`]: the IMA contrast and its 2D geometric decomposition.
//! - [`flows`]: invertible residual flows with full or triangular Jacobians.
//! - [`training`]: regularized maximum-likelihood training.
//! - [`metrics`]: MCC (Spearman + Hungarian) and KL divergence to the truth.

pub mod contrast;
pub mod diffmath;
pub mod error;
pub mod flows;
pub mod metrics;
pub mod mixing;
pub mod training;

pub use error::{Error, Result};
