//! Particle filters for stochastic (partial) differential equations, including a
//! filter that nudges particles with Girsanov-reweighted control perturbations.
//!
//! The crate is organised bottom-up:
//!
//! - [`rng`]: keyed, reproducible random streams
//! - [`model`]: the forward-model trait, window propagation and adjoint gradients
//! - [`linear_sde`], [`sks`] (with [`fem`]): the two bundled models
//! - [`likelihood`], [`weights`]: `Φ`, the Girsanov penalty, ESS and resampling
//! - [`optim`]: L-BFGS-B and Brent's method
//! - [`filters`]: bootstrap, temper-jitter and three-stage nudging filters
//! - [`metrics`], [`experiment`]: diagnostics and the twin-experiment harness

pub mod error;
pub mod experiment;
pub mod fem;
pub mod filters;
pub mod likelihood;
pub mod linear_sde;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod optim;
pub mod sks;
pub mod weights;

pub use error::{Error, Result};
