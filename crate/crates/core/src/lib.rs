//! Annealed importance sampling with trainable bridging paths.
//!
//! The crate estimates `log Z` for unnormalized two-dimensional densities
//! and tunes the annealing path and kernel step sizes by stochastic
//! gradient descent on inverse-KL or Jeffreys objectives.

pub mod autodiff;
pub mod rng;
pub mod targets;
pub mod path;
pub mod kernels;
pub mod sampler;
pub mod objective;
pub mod plot;
